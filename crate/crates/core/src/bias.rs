//! Bootstrap chains, random homotopies and Monte Carlo evaluation of
//! `Bᵏf` and of the bias-reduced functional `f_k`.
//!
//! A chain starts at `θ̂⁽⁰⁾ = θ` and moves by repeated parametric
//! bootstrap: `θ̂⁽ʲ⁺¹⁾` is the mean/covariance estimate of a fresh Gaussian
//! sample of size `n` drawn at `θ̂⁽ʲ⁾`. The `j`-step expectation of `f` is
//! `Tʲf`, so `Bᵏf = (T − I)ᵏf` is the expected `k`-th order difference
//! of `f` along the chain, and `f_k = Σ_{j≤k} (−1)ʲ Bʲf` collapses to
//! `Σ_i (−1)ⁱ C(k+1, i+1) Tⁱf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::functionals::Functional;
use crate::model::{
    estimate_theta, gamma_matrix, psd_sqrt, symmetrize, EigenDecomp, Matrix, NoiseMode, NoiseStats,
    Param,
};
use crate::rng::StreamKey;
use crate::stats::{binomial, mean_stderr};

/// Smallest eigenvalue tolerated in a smoothed-homotopy output.
const PSD_TOL: f64 = 1e-10;

/// Markov kernel driving the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// The law of `(X̄, Σ̂)` itself.
    Exact,
    /// The γ-smoothed homotopy endpoint; agrees with `Exact` whenever the
    /// covariance spectrum lies in `[1/(2a), 2a]`.
    Smoothed { a: f64 },
}

impl KernelKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelKind::Exact => Ok(()),
            KernelKind::Smoothed { a } if a >= 1.0 && a.is_finite() => Ok(()),
            KernelKind::Smoothed { a } => Err(Error::InvalidInput(format!(
                "smoothed kernel needs a >= 1, got {a}"
            ))),
        }
    }

    /// `H(θ; t)` for this kernel.
    pub fn homotopy(&self, theta: &Param, t: f64, noise: &NoiseStats) -> Result<Param> {
        match *self {
            KernelKind::Exact => homotopy_exact(theta, t, noise),
            KernelKind::Smoothed { a } => homotopy_smoothed(theta, t, noise, a),
        }
    }

    pub fn step(&self, theta: &Param, noise: &NoiseStats) -> Result<Param> {
        self.homotopy(theta, 1.0, noise)
    }

    pub fn label(&self) -> String {
        match *self {
            KernelKind::Exact => "exact".into(),
            KernelKind::Smoothed { a } => format!("smoothed(a={a})"),
        }
    }
}

/// Kernel plus the way its noise is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainKernel {
    pub kind: KernelKind,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl ChainKernel {
    pub fn exact() -> Self {
        ChainKernel {
            kind: KernelKind::Exact,
            noise: NoiseMode::Raw,
        }
    }

    pub fn smoothed(a: f64) -> Self {
        ChainKernel {
            kind: KernelKind::Smoothed { a },
            noise: NoiseMode::Raw,
        }
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub states: Vec<Param>,
    pub kernel: KernelKind,
    pub n: usize,
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicates: usize,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (value, stderr) = mean_stderr(xs);
        MCEstimate {
            value,
            stderr,
            replicates: xs.len(),
        }
    }

    pub fn exact(value: f64) -> Self {
        MCEstimate {
            value,
            stderr: 0.0,
            replicates: 1,
        }
    }

    /// `|value − target| / stderr`, infinite when the stderr is zero and
    /// the values differ.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.value - target).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }
}

/// Variance reduction for the inner chains of [`evaluate_fk`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlVariate {
    None,
    /// Subtract `Σ_i w_i ⟨∇f(θ̂⁽⁰⁾), θ̂⁽ⁱ⁾ − θ̂⁽⁰⁾⟩`, which has mean zero
    /// because both kernels are martingales in `(μ, Σ)`.
    #[default]
    Martingale,
}

/// Inner Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerMc {
    pub replicates: usize,
    #[serde(default)]
    pub control_variate: ControlVariate,
}

impl InnerMc {
    pub fn new(replicates: usize) -> Self {
        InnerMc {
            replicates,
            control_variate: ControlVariate::default(),
        }
    }

    pub fn plain(replicates: usize) -> Self {
        InnerMc {
            replicates,
            control_variate: ControlVariate::None,
        }
    }
}

impl Default for InnerMc {
    fn default() -> Self {
        Self::new(10_000)
    }
}

/// `H((μ,Σ); t) = (μ + tΣ^{1/2}Z̄, Σ^{1/2}((1−t)I + tΣ̂_Z)Σ^{1/2})`.
///
/// At `t = 1` this is the mean/covariance estimate of the sample
/// `X_j = μ + Σ^{1/2}Z_j`.
pub fn homotopy_exact(theta: &Param, t: f64, noise: &NoiseStats) -> Result<Param> {
    check_noise(theta, noise)?;
    if t == 0.0 {
        return Ok(theta.clone());
    }
    let d = theta.dim();
    let root = psd_sqrt(&theta.sigma)?;
    let mid = Matrix::identity(d, d) * (1.0 - t) + &noise.sigma_hat_z * t;
    Ok(Param {
        mu: &theta.mu + &root * &noise.zbar * t,
        sigma: symmetrize(&(&root * mid * &root)),
    })
}

/// `H(θ; t) = θ + tE(θ)` with `E(θ) = (γ(Σ)Z̄, γ(Σ)(Σ̂_Z − I)γ(Σ))`.
pub fn homotopy_smoothed(theta: &Param, t: f64, noise: &NoiseStats, a: f64) -> Result<Param> {
    check_noise(theta, noise)?;
    if t == 0.0 {
        return Ok(theta.clone());
    }
    let d = theta.dim();
    let g = gamma_matrix(&theta.sigma, a)?;
    let e_mu = &g * &noise.zbar;
    let e_sigma = &g * (&noise.sigma_hat_z - Matrix::identity(d, d)) * &g;
    let out = theta.shifted(t, &e_mu, &e_sigma);
    let min = EigenDecomp::new(&out.sigma)?.min_eigenvalue();
    if min < -PSD_TOL {
        return Err(Error::PsdViolation {
            min_eigenvalue: min,
        });
    }
    Ok(out)
}

fn check_noise(theta: &Param, noise: &NoiseStats) -> Result<()> {
    if noise.n < 2 {
        return Err(Error::InvalidInput("noise block needs n >= 2 rows".into()));
    }
    if noise.zbar.len() != theta.dim() {
        return Err(Error::InvalidInput(format!(
            "noise dimension {} does not match parameter dimension {}",
            noise.zbar.len(),
            theta.dim()
        )));
    }
    Ok(())
}

/// One bootstrap chain `θ̂⁽⁰⁾ = θ, …, θ̂⁽ᵏ⁾`. Step `j` draws its noise from
/// `key.child(j)`.
pub fn sample_chain(
    theta: &Param,
    k: usize,
    n: usize,
    kernel: &ChainKernel,
    key: StreamKey,
) -> Result<ChainPath> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sample size n = {n}; need n >= 2"
        )));
    }
    kernel.kind.validate()?;
    let d = theta.dim();
    let mut states = Vec::with_capacity(k + 1);
    states.push(theta.clone());
    for j in 0..k {
        let noise = kernel.noise.draw(n, d, &mut key.child(j as u64).rng());
        let next = kernel.kind.step(&states[j], &noise)?;
        states.push(next);
    }
    Ok(ChainPath {
        states,
        kernel: kernel.kind,
        n,
    })
}

/// `Σ_{j=0}^{k} (−1)^{k−j} C(k,j) f(θ̂⁽ʲ⁾)`, the k-th order difference of `f`
/// along the path.
pub fn alt_sum(f: &Functional, path: &ChainPath, k: usize) -> Result<f64> {
    if path.states.len() < k + 1 {
        return Err(Error::InvalidInput(format!(
            "path has {} states, need {}",
            path.states.len(),
            k + 1
        )));
    }
    let mut acc = 0.0;
    for (j, state) in path.states[..=k].iter().enumerate() {
        let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        acc += sign * binomial(k as u64, j as u64) * f.eval(state)?;
    }
    Ok(acc)
}

/// Monte Carlo estimate of `(Bᵏf)(θ)` from `replicates` independent chains.
pub fn estimate_bk(
    f: &Functional,
    theta: &Param,
    k: usize,
    n: usize,
    kernel: &ChainKernel,
    replicates: usize,
    key: StreamKey,
    exec: &Executor,
) -> Result<MCEstimate> {
    if replicates < 2 {
        return Err(Error::InvalidInput("need at least 2 replicates".into()));
    }
    let samples = exec.try_map_indexed(replicates, |r| {
        let path = sample_chain(theta, k, n, kernel, key.child(r as u64))?;
        alt_sum(f, &path, k)
    })?;
    Ok(MCEstimate::from_samples(&samples))
}

/// Weights `w_i = (−1)ⁱ C(k+1, i+1)` with `f_k(θ) = Σ_i w_i E f(θ̂⁽ⁱ⁾)`.
pub fn fk_weights(k: usize) -> Vec<f64> {
    (0..=k)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k as u64 + 1, i as u64 + 1)
        })
        .collect()
}

/// The same weights from the literal double sum
/// `Σ_j (−1)ʲ Σ_{i≤j} (−1)^{j−i} C(j,i)`.
pub fn fk_weights_literal(k: usize) -> Vec<f64> {
    let mut w = vec![0.0; k + 1];
    for j in 0..=k {
        let outer = if j % 2 == 0 { 1.0 } else { -1.0 };
        for (i, wi) in w.iter_mut().enumerate().take(j + 1) {
            let inner = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
            *wi += outer * inner * binomial(j as u64, i as u64);
        }
    }
    w
}

/// Checks the collapsed weights against the double sum for every `k ≤ max_k`.
pub fn verify_fk_weights(max_k: usize) -> Result<()> {
    for k in 0..=max_k {
        let fast = fk_weights(k);
        let slow = fk_weights_literal(k);
        if fast != slow {
            return Err(Error::InvalidInput(format!(
                "f_k weights mismatch at k = {k}: {fast:?} vs {slow:?}"
            )));
        }
    }
    Ok(())
}

/// Monte Carlo estimate of `f_k(at)`. All `k + 1` expectations come from
/// the same chains.
pub fn evaluate_fk(
    f: &Functional,
    at: &Param,
    k: usize,
    n: usize,
    kernel: &ChainKernel,
    mc: &InnerMc,
    key: StreamKey,
    exec: &Executor,
) -> Result<MCEstimate> {
    if k == 0 {
        return Ok(MCEstimate::exact(f.eval(at)?));
    }
    if mc.replicates < 2 {
        return Err(Error::InvalidInput(
            "need at least 2 inner replicates".into(),
        ));
    }
    let weights = fk_weights(k);
    let grad = match mc.control_variate {
        ControlVariate::None => None,
        ControlVariate::Martingale => Some(f.grad(at)?),
    };
    let samples = exec.try_map_indexed(mc.replicates, |r| {
        let path = sample_chain(at, k, n, kernel, key.child(r as u64))?;
        let mut acc = 0.0;
        for (w, state) in weights.iter().zip(&path.states) {
            let mut term = f.eval(state)?;
            if let Some(g) = &grad {
                term -= g.apply(&(&state.mu - &at.mu), &(&state.sigma - &at.sigma));
            }
            acc += w * term;
        }
        Ok::<_, Error>(acc)
    })?;
    Ok(MCEstimate::from_samples(&samples))
}

/// `f_k(θ̂)` with `θ̂` the mean/covariance estimate of `data`.
pub fn full_estimator(
    f: &Functional,
    data: &Matrix,
    k: usize,
    kernel: &ChainKernel,
    mc: &InnerMc,
    key: StreamKey,
    exec: &Executor,
) -> Result<MCEstimate> {
    let theta_hat = estimate_theta(data)?;
    evaluate_fk(f, &theta_hat, k, data.nrows(), kernel, mc, key, exec)
}

/// Nested homotopy `G_k(θ; t_1..t_k) = H_k(G_{k−1}(θ; t_1..t_{k−1}); t_k)`.
pub fn superpose_gk(
    theta: &Param,
    t: &[f64],
    noises: &[NoiseStats],
    kernel: KernelKind,
) -> Result<Param> {
    if t.len() != noises.len() {
        return Err(Error::InvalidInput(format!(
            "{} homotopy times but {} noise blocks",
            t.len(),
            noises.len()
        )));
    }
    if let Some(bad) = t.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidInput(format!(
            "homotopy time {bad} outside [0, 1]"
        )));
    }
    let mut state = theta.clone();
    for (&tj, noise) in t.iter().zip(noises) {
        state = kernel.homotopy(&state, tj, noise)?;
    }
    Ok(state)
}
