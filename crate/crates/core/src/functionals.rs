//! Smooth functionals `f(μ, Σ)` with analytic gradients.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{psd_sqrt, symmetrize, EigenDecomp, Matrix, Param, Vector};

/// Scalar function applied spectrally in [`FunctionalKind::SpectralTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    Log,
    Exp,
    Sqrt,
    Power { p: f64 },
}

impl ScalarFn {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            ScalarFn::Log => u.ln(),
            ScalarFn::Exp => u.exp(),
            ScalarFn::Sqrt => u.sqrt(),
            ScalarFn::Power { p } => powf(u, p),
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        match *self {
            ScalarFn::Log => 1.0 / u,
            ScalarFn::Exp => u.exp(),
            ScalarFn::Sqrt => 0.5 / u.sqrt(),
            ScalarFn::Power { p } => {
                if p == 0.0 {
                    0.0
                } else {
                    p * powf(u, p - 1.0)
                }
            }
        }
    }

    pub fn in_domain(&self, u: f64) -> bool {
        match *self {
            ScalarFn::Log => u > 0.0,
            ScalarFn::Exp => u.is_finite(),
            ScalarFn::Sqrt => u >= 0.0,
            ScalarFn::Power { p } => {
                if p.fract() == 0.0 && p >= 0.0 {
                    u.is_finite()
                } else if p > 0.0 {
                    u >= 0.0
                } else {
                    u > 0.0
                }
            }
        }
    }

    fn name(&self) -> String {
        match *self {
            ScalarFn::Log => "log".into(),
            ScalarFn::Exp => "exp".into(),
            ScalarFn::Sqrt => "sqrt".into(),
            ScalarFn::Power { p } => format!("pow{p}"),
        }
    }
}

fn powf(u: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        u.powi(p as i32)
    } else {
        u.powf(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    /// `⟨u, μ⟩`
    LinearMean { u: Vector },
    /// `‖μ‖²`
    QuadraticMean,
    /// `tr(Σ B)`
    TraceLinear { b: Matrix },
    /// `tr(Σ²)`
    TraceQuadratic,
    /// `tr(φ(Σ) B)`
    SpectralTrace { phi: ScalarFn, b: Matrix },
    /// `offset + Σ w_i f_i`
    AffineCombination {
        offset: f64,
        terms: Vec<(f64, Functional)>,
    },
}

/// Partial derivatives `(∂f/∂μ, ∂f/∂Σ)`; `d_sigma` is stored symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_mu: Vector,
    pub d_sigma: Matrix,
}

impl Gradient {
    pub fn zeros(d: usize) -> Self {
        Gradient {
            d_mu: Vector::zeros(d),
            d_sigma: Matrix::zeros(d, d),
        }
    }

    /// `⟨d_mu, v⟩ + ⟨d_sigma, H⟩`.
    pub fn apply(&self, v: &Vector, h: &Matrix) -> f64 {
        self.d_mu.dot(v) + self.d_sigma.dot(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub kind: FunctionalKind,
    /// Declared smoothness `s`; infinite for the C^∞ catalog members.
    pub smoothness: f64,
}

impl Functional {
    fn of(kind: FunctionalKind) -> Self {
        Functional {
            kind,
            smoothness: f64::INFINITY,
        }
    }

    pub fn linear_mean(u: Vector) -> Self {
        Self::of(FunctionalKind::LinearMean { u })
    }

    pub fn quadratic_mean() -> Self {
        Self::of(FunctionalKind::QuadraticMean)
    }

    pub fn trace_linear(b: Matrix) -> Self {
        Self::of(FunctionalKind::TraceLinear { b })
    }

    pub fn trace_quadratic() -> Self {
        Self::of(FunctionalKind::TraceQuadratic)
    }

    pub fn spectral_trace(phi: ScalarFn, b: Matrix) -> Self {
        Self::of(FunctionalKind::SpectralTrace { phi, b })
    }

    pub fn affine(offset: f64, terms: Vec<(f64, Functional)>) -> Self {
        Self::of(FunctionalKind::AffineCombination { offset, terms })
    }

    pub fn constant(c: f64) -> Self {
        Self::affine(c, Vec::new())
    }

    pub fn with_smoothness(mut self, s: f64) -> Self {
        self.smoothness = s;
        self
    }

    /// Number of chain steps matched to the declared smoothness:
    /// `ceil(s) − 2` for `s > 2`, otherwise 0. `None` when `s` is infinite.
    pub fn default_k(&self) -> Option<usize> {
        default_k_for(self.smoothness)
    }

    pub fn name(&self) -> String {
        match &self.kind {
            FunctionalKind::LinearMean { .. } => "linear_mean".into(),
            FunctionalKind::QuadraticMean => "quadratic_mean".into(),
            FunctionalKind::TraceLinear { .. } => "trace_linear".into(),
            FunctionalKind::TraceQuadratic => "trace_quadratic".into(),
            FunctionalKind::SpectralTrace { phi, .. } => format!("spectral_trace_{}", phi.name()),
            FunctionalKind::AffineCombination { .. } => "affine_combination".into(),
        }
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        let ok = match &self.kind {
            FunctionalKind::LinearMean { u } => u.len() == d,
            FunctionalKind::TraceLinear { b } | FunctionalKind::SpectralTrace { b, .. } => {
                b.nrows() == d && b.ncols() == d
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "functional {} does not match dimension {d}",
                self.name()
            )))
        }
    }

    pub fn eval(&self, p: &Param) -> Result<f64> {
        self.check_dims(p.dim())?;
        Ok(match &self.kind {
            FunctionalKind::LinearMean { u } => u.dot(&p.mu),
            FunctionalKind::QuadraticMean => p.mu.norm_squared(),
            FunctionalKind::TraceLinear { b } => p.sigma.dot(&b.transpose()),
            FunctionalKind::TraceQuadratic => p.sigma.dot(&p.sigma.transpose()),
            FunctionalKind::SpectralTrace { phi, b } => {
                let eig = spectral_eig(phi, &p.sigma)?;
                let rotated = eig.q.transpose() * symmetrize(b) * &eig.q;
                eig.lambda
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| phi.value(l) * rotated[(i, i)])
                    .sum()
            }
            FunctionalKind::AffineCombination { offset, terms } => {
                let mut acc = *offset;
                for (w, f) in terms {
                    acc += w * f.eval(p)?;
                }
                acc
            }
        })
    }

    pub fn grad(&self, p: &Param) -> Result<Gradient> {
        let d = p.dim();
        self.check_dims(d)?;
        Ok(match &self.kind {
            FunctionalKind::LinearMean { u } => Gradient {
                d_mu: u.clone(),
                d_sigma: Matrix::zeros(d, d),
            },
            FunctionalKind::QuadraticMean => Gradient {
                d_mu: &p.mu * 2.0,
                d_sigma: Matrix::zeros(d, d),
            },
            FunctionalKind::TraceLinear { b } => Gradient {
                d_mu: Vector::zeros(d),
                d_sigma: symmetrize(b),
            },
            FunctionalKind::TraceQuadratic => Gradient {
                d_mu: Vector::zeros(d),
                d_sigma: symmetrize(&p.sigma) * 2.0,
            },
            FunctionalKind::SpectralTrace { phi, b } => {
                let eig = spectral_eig(phi, &p.sigma)?;
                let mut inner = eig.q.transpose() * symmetrize(b) * &eig.q;
                for i in 0..d {
                    for j in 0..d {
                        inner[(i, j)] *= divided_difference(phi, eig.lambda[i], eig.lambda[j]);
                    }
                }
                Gradient {
                    d_mu: Vector::zeros(d),
                    d_sigma: symmetrize(&(&eig.q * inner * eig.q.transpose())),
                }
            }
            FunctionalKind::AffineCombination { terms, .. } => {
                let mut g = Gradient::zeros(d);
                for (w, f) in terms {
                    let gi = f.grad(p)?;
                    g.d_mu += gi.d_mu * *w;
                    g.d_sigma += gi.d_sigma * *w;
                }
                g
            }
        })
    }

    /// Efficiency standard deviation
    /// `σ_f² = ‖Σ^{1/2} f'_μ‖² + 2 ‖Σ^{1/2} f'_Σ Σ^{1/2}‖²_HS`.
    pub fn sigma_f(&self, theta: &Param) -> Result<f64> {
        let g = self.grad(theta)?;
        let root = psd_sqrt(&theta.sigma)?;
        let mean_part = (&root * &g.d_mu).norm_squared();
        let cov_part = (&root * &g.d_sigma * &root).norm_squared();
        Ok((mean_part + 2.0 * cov_part).sqrt())
    }

    /// Conjugate by an orthogonal `q`: the returned functional satisfies
    /// `g(qμ, qΣqᵀ) = f(μ, Σ)`.
    pub fn rotated(&self, q: &Matrix) -> Functional {
        let kind = match &self.kind {
            FunctionalKind::LinearMean { u } => FunctionalKind::LinearMean { u: q * u },
            FunctionalKind::TraceLinear { b } => FunctionalKind::TraceLinear {
                b: q * b * q.transpose(),
            },
            FunctionalKind::SpectralTrace { phi, b } => FunctionalKind::SpectralTrace {
                phi: *phi,
                b: q * b * q.transpose(),
            },
            FunctionalKind::AffineCombination { offset, terms } => {
                FunctionalKind::AffineCombination {
                    offset: *offset,
                    terms: terms.iter().map(|(w, f)| (*w, f.rotated(q))).collect(),
                }
            }
            other => other.clone(),
        };
        Functional {
            kind,
            smoothness: self.smoothness,
        }
    }

    /// Central finite differences of [`eval`](Self::eval) along random
    /// directions against [`grad`](Self::grad). Returns the worst
    /// `|fd − analytic| / max(1, |analytic|)`.
    pub fn fd_check<R: Rng + ?Sized>(&self, theta: &Param, h: f64, rng: &mut R) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&h) {
            return Err(Error::InvalidInput(format!(
                "finite-difference step {h} outside [1e-7, 1e-3]"
            )));
        }
        const TRIALS: usize = 4;
        let d = theta.dim();
        let g = self.grad(theta)?;
        let mut worst = 0.0f64;
        for trial in 0..3 * TRIALS {
            let use_mu = trial % 3 != 1;
            let use_sigma = trial % 3 != 0;
            let v = if use_mu {
                random_unit_vector(d, rng)
            } else {
                Vector::zeros(d)
            };
            let w = if use_sigma {
                random_unit_symmetric(d, rng)
            } else {
                Matrix::zeros(d, d)
            };
            let plus = self.eval(&theta.shifted(h, &v, &w))?;
            let minus = self.eval(&theta.shifted(-h, &v, &w))?;
            let fd = (plus - minus) / (2.0 * h);
            let analytic = g.apply(&v, &w);
            worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
        }
        Ok(worst)
    }
}

pub fn default_k_for(smoothness: f64) -> Option<usize> {
    if !smoothness.is_finite() {
        return None;
    }
    if smoothness > 2.0 {
        Some(smoothness.ceil() as usize - 2)
    } else {
        Some(0)
    }
}

fn spectral_eig(phi: &ScalarFn, sigma: &Matrix) -> Result<EigenDecomp> {
    let eig = EigenDecomp::new(sigma)?;
    if let Some(bad) = eig.lambda.iter().find(|&&l| !phi.in_domain(l)) {
        return Err(Error::Domain(format!(
            "eigenvalue {bad:e} outside the domain of {}",
            phi.name()
        )));
    }
    Ok(eig)
}

/// `φ[λ_i, λ_j]`, with `φ'(λ_i)` on (near-)ties.
fn divided_difference(phi: &ScalarFn, li: f64, lj: f64) -> f64 {
    if (li - lj).abs() <= 1e-8 * (1.0 + li.abs()) {
        phi.deriv(li)
    } else {
        (phi.value(li) - phi.value(lj)) / (li - lj)
    }
}

fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    let v = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let n = v.norm();
    v / n
}

fn random_unit_symmetric<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let m = symmetrize(&Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng)));
    let n = m.norm();
    m / n
}

/// Deterministic test matrix used by the catalog: SPD-ish with off-diagonal
/// coupling so gradients are not diagonal.
pub fn catalog_matrix(d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0 + 0.5 * i as f64
        } else {
            0.3 / (1.0 + (i as f64 - j as f64).abs())
        }
    })
}

/// A representative family covering every functional kind.
pub fn catalog(d: usize) -> Vec<Functional> {
    let mut e1 = Vector::zeros(d);
    e1[0] = 1.0;
    let b = catalog_matrix(d);
    vec![
        Functional::linear_mean(e1.clone()),
        Functional::quadratic_mean(),
        Functional::trace_linear(b.clone()),
        Functional::trace_quadratic(),
        Functional::spectral_trace(ScalarFn::Log, b.clone()),
        Functional::spectral_trace(ScalarFn::Power { p: 1.5 }, Matrix::identity(d, d)),
        Functional::spectral_trace(ScalarFn::Exp, b.clone()),
        Functional::affine(
            0.5,
            vec![
                (2.0, Functional::trace_quadratic()),
                (-1.0, Functional::quadratic_mean()),
                (0.25, Functional::spectral_trace(ScalarFn::Sqrt, b)),
                (1.0, Functional::linear_mean(e1)),
            ],
        ),
    ]
}
