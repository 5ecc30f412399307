//! Closed-form ground truth for models where `T`, `B` and `f_k` are exact:
//! the binomial model (Bernstein operator), the one-dimensional Gaussian
//! variance model with `f(σ²) = σ⁴`, and the Gaussian shift model.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bias::{
    estimate_bk, evaluate_fk, fk_weights_literal, verify_fk_weights, ChainKernel, InnerMc,
    MCEstimate,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::functionals::Functional;
use crate::model::Param;
use crate::rng::StreamKey;
use crate::stats::binomial;

/// Polynomial in one variable, coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn monomial(m: usize) -> Self {
        let mut c = vec![0.0; m + 1];
        c[m] = 1.0;
        Poly::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let len = self.coeffs.len().max(other.coeffs.len());
        let c = (0..len)
            .map(|i| {
                self.coeffs.get(i).copied().unwrap_or(0.0)
                    + other.coeffs.get(i).copied().unwrap_or(0.0)
            })
            .collect();
        Poly::new(c)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }
}

/// Stirling numbers of the second kind `S(m, j)` for `m, j ≤ max`.
fn stirling2(max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; max + 1]; max + 1];
    s[0][0] = 1.0;
    for m in 1..=max {
        for j in 1..=m {
            s[m][j] = j as f64 * s[m - 1][j] + s[m - 1][j - 1];
        }
    }
    s
}

/// `(Tp)(θ) = E p(X/n)`, `X ~ Binomial(n, θ)`, via factorial moments:
/// `E Xᵐ = Σ_j S(m,j) n^{(j)} θʲ`.
pub fn bernstein_t(p: &Poly, n: usize) -> Result<Poly> {
    if n == 0 {
        return Err(Error::InvalidInput("binomial size must be positive".into()));
    }
    if p.degree() > n {
        return Err(Error::InvalidInput(format!(
            "polynomial degree {} exceeds n = {n}",
            p.degree()
        )));
    }
    let deg = p.degree();
    let s = stirling2(deg);
    let nf = n as f64;
    let mut falling = vec![1.0; deg + 1];
    for j in 1..=deg {
        falling[j] = falling[j - 1] * (nf - (j - 1) as f64);
    }
    let mut out = vec![0.0; deg + 1];
    for (m, &c) in p.coeffs().iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let scale = c / nf.powi(m as i32);
        for j in 0..=m {
            out[j] += scale * s[m][j] * falling[j];
        }
    }
    Ok(Poly::new(out))
}

/// `(T − I)ᵏ p`.
pub fn binom_bk_exact(p: &Poly, n: usize, k: usize) -> Result<Poly> {
    let mut cur = p.clone();
    for _ in 0..k {
        cur = bernstein_t(&cur, n)?.sub(&cur);
    }
    Ok(cur)
}

/// `p_k = Σ_{j≤k} (−1)ʲ Bʲ p`.
pub fn binom_fk(p: &Poly, n: usize, k: usize) -> Result<Poly> {
    let mut acc = Poly::zero();
    let mut bj = p.clone();
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc = acc.add(&bj.scale(sign));
        if j < k {
            bj = bernstein_t(&bj, n)?.sub(&bj);
        }
    }
    Ok(acc)
}

/// Bias of `p_k(X/n)` as an estimator of `p(θ)`: `(−1)ᵏ (B^{k+1} p)(θ)`.
pub fn binom_fk_bias_exact(p: &Poly, n: usize, k: usize, theta: f64) -> Result<f64> {
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * binom_bk_exact(p, n, k + 1)?.eval(theta))
}

pub fn binomial_pmf(n: usize, x: usize, theta: f64) -> f64 {
    binomial(n as u64, x as u64) * theta.powi(x as i32) * (1.0 - theta).powi((n - x) as i32)
}

/// The same bias by summing over all `n + 1` binomial outcomes.
pub fn binom_fk_bias_enumerated(p: &Poly, n: usize, k: usize, theta: f64) -> Result<f64> {
    let pk = binom_fk(p, n, k)?;
    let nf = n as f64;
    let mean: f64 = (0..=n)
        .map(|x| binomial_pmf(n, x, theta) * pk.eval(x as f64 / nf))
        .sum();
    Ok(mean - p.eval(theta))
}

/// `(Bʲf)(σ²) = (2/(n−1))ʲ σ⁴` for `f = σ⁴` in the one-dimensional Gaussian
/// model, from `E Σ̂² = σ⁴ (n+1)/(n−1)`.
pub fn chisq_bj_exact(sigma2: f64, n: usize, j: u32) -> Result<f64> {
    if n < 2 || !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need n >= 2 and sigma2 > 0 (n = {n}, sigma2 = {sigma2})"
        )));
    }
    Ok((2.0 / (n - 1) as f64).powi(j as i32) * sigma2 * sigma2)
}

/// Gauss–Hermite rule for the weight `e^{−x²}`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch for starting values, then Newton polishing on the
    /// orthonormal recurrence.
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput(
                "quadrature order must be positive".into(),
            ));
        }
        let jacobi = DMatrix::from_fn(m, m, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(m);
        for z in nodes.iter_mut() {
            for _ in 0..100 {
                let (p, pp) = hermite_orthonormal(m, *z);
                let dz = p / pp;
                *z -= dz;
                if dz.abs() <= 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            let (_, pp) = hermite_orthonormal(m, *z);
            weights.push(2.0 / (pp * pp));
        }
        Ok(GaussHermite { nodes, weights })
    }

    /// `E g(Z)` for `Z ~ N(0, 1)`.
    pub fn expect_normal(&self, g: impl Fn(f64) -> f64) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(s2 * x))
            .sum();
        total / std::f64::consts::PI.sqrt()
    }
}

/// Value of the degree-`m` orthonormal Hermite polynomial at `z` and its
/// derivative.
fn hermite_orthonormal(m: usize, z: f64) -> (f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=m {
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
    }
    (p1, (2.0 * m as f64).sqrt() * p2)
}

/// `(Bᵏf)(θ)` in the shift model `θ̂ = θ + σξ`:
/// `Σ_j (−1)^{k−j} C(k,j) E f(θ + √j σ Z)`, each term by `m`-point
/// Gauss–Hermite quadrature.
pub fn shift_bk_quadrature(
    f: impl Fn(f64) -> f64,
    theta: f64,
    noise_sd: f64,
    k: usize,
    m: usize,
) -> Result<f64> {
    if m < 20 {
        return Err(Error::InvalidInput(format!("quadrature order {m} < 20")));
    }
    let gh = GaussHermite::new(m)?;
    let mut acc = 0.0;
    for j in 0..=k {
        let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
        let scale = (j as f64).sqrt() * noise_sd;
        let e = gh.expect_normal(|z| f(theta + scale * z));
        acc += sign * binomial(k as u64, j as u64) * e;
    }
    Ok(acc)
}

/// Direct Monte Carlo of the shift-model chain: the `k`-th difference of
/// `f` along `x_0 = θ`, `x_{j+1} = x_j + σξ_j`.
pub fn shift_bk_monte_carlo(
    f: impl Fn(f64) -> f64 + Sync,
    theta: f64,
    noise_sd: f64,
    k: usize,
    replicates: usize,
    key: StreamKey,
    exec: &Executor,
) -> MCEstimate {
    let samples = exec.map_indexed(replicates, |r| {
        let mut rng = key.child(r as u64).rng();
        let mut x = theta;
        let mut acc = 0.0;
        for j in 0..=k {
            if j > 0 {
                let xi: f64 = StandardNormal.sample(&mut rng);
                x += noise_sd * xi;
            }
            let sign = if (k - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            acc += sign * binomial(k as u64, j as u64) * f(x);
        }
        acc
    });
    MCEstimate::from_samples(&samples)
}

/// Outcome of one identity in the oracle suite.
#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl OracleOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        OracleOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Smooth test functions for the shift-model checks.
pub fn shift_test_functions() -> Vec<(&'static str, fn(f64) -> f64)> {
    vec![
        ("x", |x| x),
        ("x^2", |x| x * x),
        ("x^4", |x| x.powi(4)),
        ("sin", f64::sin),
        ("exp(x/2)", |x| (0.5 * x).exp()),
    ]
}

/// Largest `|bias_exact − bias_enumerated|` over the standard grid:
/// `n ∈ ns`, monomials and two mixed polynomials up to degree 6,
/// `k ≤ 4`, 101 equispaced θ.
pub fn bias_identity_max_error(ns: &[usize]) -> Result<f64> {
    let mut polys: Vec<Poly> = (0..=6).map(Poly::monomial).collect();
    polys.push(Poly::new(vec![0.5, -1.0, 2.0, 0.0, -0.75]));
    polys.push(Poly::new(vec![0.0, 0.3, -0.2, 1.1, 0.0, -0.4, 0.25]));
    let mut worst = 0.0f64;
    for &n in ns {
        for p in &polys {
            if p.degree() > n {
                continue;
            }
            for k in 0..=4 {
                let exact = binom_bk_exact(p, n, k + 1)?;
                let pk = binom_fk(p, n, k)?;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                for i in 0..=100 {
                    let theta = i as f64 / 100.0;
                    let a = sign * exact.eval(theta);
                    let nf = n as f64;
                    let mean: f64 = (0..=n)
                        .map(|x| binomial_pmf(n, x, theta) * pk.eval(x as f64 / nf))
                        .sum();
                    let b = mean - p.eval(theta);
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Runs every oracle identity and reports PASS/FAIL for each.
pub fn run_oracle_suite(seed: u64, exec: &Executor) -> Result<Vec<OracleOutcome>> {
    let key = StreamKey::new(seed);
    let mut out = Vec::new();

    // Bernstein operator
    let theta_poly = Poly::monomial(1);
    let t1 = bernstein_t(&theta_poly, 10)?;
    out.push(OracleOutcome::new(
        "bernstein: T fixes linear",
        t1 == theta_poly,
        format!("T(θ) coeffs {:?}", t1.coeffs()),
    ));
    let t2 = bernstein_t(&Poly::monomial(2), 10)?.eval(0.5);
    out.push(OracleOutcome::new(
        "bernstein: T(θ²) at 0.5, n=10",
        (t2 - 0.275).abs() < 1e-15,
        format!("{t2} vs 0.275"),
    ));
    let c = bernstein_t(&Poly::new(vec![3.25]), 7)?;
    out.push(OracleOutcome::new(
        "bernstein: T fixes constants",
        c == Poly::new(vec![3.25]),
        format!("{:?}", c.coeffs()),
    ));
    let b1 = binom_bk_exact(&Poly::monomial(2), 10, 1)?.eval(0.5);
    let b2 = binom_bk_exact(&Poly::monomial(2), 10, 2)?.eval(0.5);
    out.push(OracleOutcome::new(
        "binomial: B and B² of θ² at 0.5, n=10",
        (b1 - 0.025).abs() < 1e-15 && (b2 + 0.0025).abs() < 1e-15,
        format!("B = {b1}, B² = {b2}"),
    ));
    let bias1 = binom_fk_bias_exact(&Poly::monomial(2), 10, 1, 0.5)?;
    out.push(OracleOutcome::new(
        "binomial: bias of p_1 for θ², n=10, θ=0.5",
        (bias1 - 0.0025).abs() < 1e-15,
        format!("{bias1} vs 0.0025"),
    ));

    let worst = bias_identity_max_error(&[5, 10, 20])?;
    out.push(OracleOutcome::new(
        "binomial: bias identity vs enumeration",
        worst <= 1e-12,
        format!("max |diff| = {worst:e} (tol 1e-12)"),
    ));

    let weights_ok = verify_fk_weights(12).is_ok();
    out.push(OracleOutcome::new(
        "f_k weights: collapsed form vs double sum (k <= 12)",
        weights_ok,
        format!("k=3: {:?}", fk_weights_literal(3)),
    ));

    // χ² model
    let n = 11;
    let theta = Param::new(DVector::zeros(1), DMatrix::identity(1, 1))?;
    let f = Functional::trace_quadratic();
    let kernel = ChainKernel::exact();
    for j in 1..=3u32 {
        let est = estimate_bk(
            &f,
            &theta,
            j as usize,
            n,
            &kernel,
            100_000,
            key.child(1).child(j as u64),
            exec,
        )?;
        let exact = chisq_bj_exact(1.0, n, j)?;
        out.push(OracleOutcome::new(
            &format!("chi-square: B^{j} sigma^4, n=11"),
            est.z_score(exact) <= 4.0,
            format!(
                "{:.6} ± {:.6} vs {exact} ({:.2} se)",
                est.value,
                est.stderr,
                est.z_score(exact)
            ),
        ));
    }
    let fk = evaluate_fk(
        &f,
        &theta,
        1,
        n,
        &kernel,
        &InnerMc::new(100_000),
        key.child(2),
        exec,
    )?;
    out.push(OracleOutcome::new(
        "chi-square: f_1 at sigma^2 = 1, n=11",
        fk.z_score(0.8) <= 4.0,
        format!("{:.6} ± {:.6} vs 0.8", fk.value, fk.stderr),
    ));

    // shift model
    let sd = 0.7;
    let theta0 = 0.3;
    let lin = shift_bk_quadrature(|x| x, theta0, sd, 3, 40)?;
    let sq1 = shift_bk_quadrature(|x| x * x, theta0, sd, 1, 40)?;
    let sq2 = shift_bk_quadrature(|x| x * x, theta0, sd, 2, 40)?;
    out.push(OracleOutcome::new(
        "shift: closed forms for x and x²",
        lin.abs() < 1e-12 && (sq1 - sd * sd).abs() < 1e-12 && sq2.abs() < 1e-12,
        format!("B³x = {lin:e}, Bx² = {sq1}, B²x² = {sq2:e}"),
    ));
    let mut gate = 0.0f64;
    for (_, g) in shift_test_functions() {
        for k in 0..=4 {
            let a = shift_bk_quadrature(g, theta0, sd, k, 40)?;
            let b = shift_bk_quadrature(g, theta0, sd, k, 80)?;
            gate = gate.max((a - b).abs());
        }
    }
    out.push(OracleOutcome::new(
        "shift: Gauss-Hermite m=40 vs m=80",
        gate < 1e-10,
        format!("max |diff| = {gate:e}"),
    ));
    let mut worst_z = 0.0f64;
    for (i, (_, g)) in shift_test_functions().into_iter().enumerate() {
        for k in 1..=3 {
            let q = shift_bk_quadrature(g, theta0, sd, k, 40)?;
            let mc = shift_bk_monte_carlo(
                g,
                theta0,
                sd,
                k,
                100_000,
                key.child(3).child(i as u64).child(k as u64),
                exec,
            );
            worst_z = worst_z.max(mc.z_score(q));
        }
    }
    out.push(OracleOutcome::new(
        "shift: quadrature vs Monte Carlo chain",
        worst_z <= 4.0,
        format!("worst |z| = {worst_z:.2}"),
    ));
    Ok(out)
}
