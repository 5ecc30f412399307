//! Gaussian model primitives: parameters, spectral calculus, the smoothed
//! square root, noise blocks and the standard mean/covariance estimators.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Symmetry tolerance relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-12;
/// Negative eigenvalues below this magnitude are treated as roundoff.
const CLAMP_LOG_TOL: f64 = 1e-10;

/// A parameter record `(mu, sigma)`.
///
/// This is what estimators and chain steps produce: `sigma` is symmetric
/// PSD but may be singular. [`Theta`] adds the positive-definite invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub mu: Vector,
    pub sigma: Matrix,
}

impl Param {
    pub fn new(mu: Vector, sigma: Matrix) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "mu has length {d} but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        Ok(Param { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `self + t * (dmu, dsigma)`.
    pub fn shifted(&self, t: f64, dmu: &Vector, dsigma: &Matrix) -> Param {
        Param {
            mu: &self.mu + dmu * t,
            sigma: symmetrize(&(&self.sigma + dsigma * t)),
        }
    }
}

/// Model parameter with symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theta(Param);

impl Theta {
    pub fn new(mu: Vector, sigma: Matrix) -> Result<Self> {
        Self::from_param(Param::new(mu, sigma)?)
    }

    pub fn from_param(p: Param) -> Result<Self> {
        check_symmetric(&p.sigma)?;
        let eig = EigenDecomp::new(&p.sigma)?;
        let min = eig.min_eigenvalue();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        Ok(Theta(p))
    }

    pub fn standard(d: usize) -> Self {
        Theta(Param {
            mu: Vector::zeros(d),
            sigma: Matrix::identity(d, d),
        })
    }

    pub fn param(&self) -> &Param {
        &self.0
    }

    pub fn into_param(self) -> Param {
        self.0
    }
}

impl Deref for Theta {
    type Target = Param;
    fn deref(&self) -> &Param {
        &self.0
    }
}

/// The region `Θ(a; d)`: covariance spectrum inside `[1/a, a]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub a: f64,
    pub d: usize,
}

impl ParamDomain {
    pub fn new(a: f64, d: usize) -> Result<Self> {
        if !(a >= 1.0) || !a.is_finite() {
            return Err(Error::InvalidInput(format!(
                "domain scale a = {a} must be >= 1"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        Ok(ParamDomain { a, d })
    }

    pub fn contains(&self, p: &Param) -> bool {
        if p.dim() != self.d {
            return false;
        }
        match EigenDecomp::new(&p.sigma) {
            Ok(eig) => eig.lambda.iter().all(|&l| l >= 1.0 / self.a && l <= self.a),
            Err(_) => false,
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub q: Matrix,
    pub lambda: Vector,
}

impl EigenDecomp {
    /// Decomposes `(sigma + sigmaᵀ)/2` after checking symmetry.
    pub fn new(sigma: &Matrix) -> Result<Self> {
        check_symmetric(sigma)?;
        Ok(Self::of_symmetrized(sigma))
    }

    fn of_symmetrized(sigma: &Matrix) -> Self {
        let d = sigma.nrows();
        if d == 1 {
            return EigenDecomp {
                q: Matrix::identity(1, 1),
                lambda: Vector::from_element(1, sigma[(0, 0)]),
            };
        }
        let eig = symmetrize(sigma).symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let lambda = Vector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut q = Matrix::zeros(d, d);
        for (col, &i) in order.iter().enumerate() {
            q.set_column(col, &eig.eigenvectors.column(i));
        }
        EigenDecomp { q, lambda }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.lambda[self.dim() - 1]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.lambda[0]
    }

    /// `Q diag(phi(λ)) Qᵀ`, symmetrized.
    pub fn apply(&self, phi: impl Fn(f64) -> f64) -> Matrix {
        let scaled = Vector::from_iterator(self.dim(), self.lambda.iter().map(|&l| phi(l)));
        self.with_eigenvalues(&scaled)
    }

    pub fn with_eigenvalues(&self, values: &Vector) -> Matrix {
        let mut qd = self.q.clone();
        for (mut col, &v) in qd.column_iter_mut().zip(values.iter()) {
            col *= v;
        }
        symmetrize(&(qd * self.q.transpose()))
    }

    pub fn reconstruct(&self) -> Matrix {
        self.with_eigenvalues(&self.lambda)
    }

    /// Eigenvalues with negatives set to zero; logs clamps beyond roundoff.
    pub fn clamped_eigenvalues(&self) -> Vector {
        let min = self.min_eigenvalue();
        if min < -CLAMP_LOG_TOL {
            log::debug!("clamping negative eigenvalue {min:e} to zero");
        }
        self.lambda.map(|l| l.max(0.0))
    }
}

/// The smoothed square root `γ`.
///
/// `γ(u) = λ(2au) √u (1 − λ(u/(4a)))` where `λ` is the C^∞ step
/// `h(2u−1) / (h(2u−1) + h(2−2u))`, `h(x) = exp(−1/x)` for `x > 0`.
/// It equals `√u` on `[1/(2a), 2a]` and vanishes outside `(1/(4a), 4a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothSqrt {
    a: f64,
}

impl SmoothSqrt {
    pub fn new(a: f64) -> Result<Self> {
        if !(a >= 1.0) || !a.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smoothing scale a = {a} must be >= 1"
            )));
        }
        Ok(SmoothSqrt { a })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Smooth step: 0 on `(-∞, 1/2]`, 1 on `[1, ∞)`.
    pub fn step(u: f64) -> f64 {
        fn h(x: f64) -> f64 {
            if x > 0.0 {
                (-1.0 / x).exp()
            } else {
                0.0
            }
        }
        let up = h(2.0 * u - 1.0);
        let down = h(2.0 - 2.0 * u);
        if up == 0.0 {
            0.0
        } else {
            up / (up + down)
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let lower = Self::step(2.0 * self.a * u);
        if lower == 0.0 {
            return 0.0;
        }
        lower * u.sqrt() * (1.0 - Self::step(u / (4.0 * self.a)))
    }
}

/// Standard normal noise block `Z` (n rows, d columns) and its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    pub z: Matrix,
}

impl NoiseBlock {
    /// Draws `n * d` standard normals in row-major order.
    pub fn draw<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Self {
        let mut z = Matrix::zeros(n, d);
        for j in 0..n {
            for i in 0..d {
                z[(j, i)] = StandardNormal.sample(rng);
            }
        }
        NoiseBlock { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    pub fn zbar(&self) -> Vector {
        self.z.row_mean().transpose()
    }

    /// `(n−1)⁻¹ Σ (Z_j − Z̄)(Z_j − Z̄)ᵀ`.
    pub fn sigma_hat_z(&self) -> Matrix {
        let n = self.n();
        if n < 2 {
            return Matrix::zeros(self.d(), self.d());
        }
        let zbar = self.zbar();
        let mut centered = self.z.clone();
        for mut row in centered.row_iter_mut() {
            row -= zbar.transpose();
        }
        symmetrize(&(centered.transpose() * &centered / (n - 1) as f64))
    }

    /// `n⁻¹ Σ Z_j Z_jᵀ` (uncentered).
    pub fn sigma_tilde_z(&self) -> Matrix {
        symmetrize(&(self.z.transpose() * &self.z / self.n() as f64))
    }

    pub fn stats(&self) -> NoiseStats {
        NoiseStats {
            n: self.n(),
            zbar: self.zbar(),
            sigma_hat_z: self.sigma_hat_z(),
        }
    }
}

/// Sufficient statistics `(Z̄, Σ̂_Z)` of a noise block; all a homotopy needs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    pub n: usize,
    pub zbar: Vector,
    pub sigma_hat_z: Matrix,
}

impl NoiseStats {
    /// Draws `(Z̄, Σ̂_Z)` directly: `Z̄ ~ N(0, I/n)` and `(n−1)Σ̂_Z ~ W(I, n−1)`
    /// via the Bartlett decomposition. Requires `n − 1 ≥ d`.
    pub fn bartlett<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        if n < 2 || n - 1 < d {
            return Err(Error::InvalidInput(format!(
                "Bartlett sampling needs n - 1 >= d (n = {n}, d = {d})"
            )));
        }
        let m = n - 1;
        let scale = 1.0 / (n as f64).sqrt();
        let zbar = Vector::from_iterator(
            d,
            (0..d).map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }),
        );
        let mut a = Matrix::zeros(d, d);
        for i in 0..d {
            let df = (m - i) as f64;
            let chi = ChiSquared::new(df).expect("positive degrees of freedom");
            a[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let w = &a * a.transpose() / m as f64;
        Ok(NoiseStats {
            n,
            zbar,
            sigma_hat_z: symmetrize(&w),
        })
    }
}

/// How chain steps generate their noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// Draw the full `n × d` block of standard normals.
    #[default]
    Raw,
    /// Draw `(Z̄, Σ̂_Z)` from their exact joint law; falls back to raw when
    /// `n − 1 < d`.
    Bartlett,
}

impl NoiseMode {
    pub fn draw<R: Rng + ?Sized>(self, n: usize, d: usize, rng: &mut R) -> NoiseStats {
        match self {
            NoiseMode::Bartlett if n >= 2 && n > d => {
                NoiseStats::bartlett(n, d, rng).expect("checked dimensions")
            }
            _ => NoiseBlock::draw(n, d, rng).stats(),
        }
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let asym = max_asymmetry(m);
    let scale = m.amax();
    if asym > SYMMETRY_TOL * (1.0 + scale) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// `Q diag(phi(λ_i)) Qᵀ` for a symmetric matrix.
pub fn apply_spectral(phi: impl Fn(f64) -> f64, sigma: &Matrix) -> Result<Matrix> {
    Ok(EigenDecomp::new(sigma)?.apply(phi))
}

/// PSD square root, clamping negative eigenvalues to zero.
pub fn psd_sqrt(sigma: &Matrix) -> Result<Matrix> {
    let eig = EigenDecomp::new(sigma)?;
    let clamped = eig.clamped_eigenvalues();
    Ok(eig.with_eigenvalues(&clamped.map(f64::sqrt)))
}

/// `γ(Σ)` for the smoothed square root with scale `a`.
pub fn gamma_matrix(sigma: &Matrix, a: f64) -> Result<Matrix> {
    let gamma = SmoothSqrt::new(a)?;
    apply_spectral(|u| gamma.eval(u), sigma)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = EigenDecomp::of_symmetrized(m);
    eig.max_eigenvalue().abs().max(eig.min_eigenvalue().abs())
}

/// Spectral norm of a general matrix.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `‖w‖ + ‖W‖_op`.
pub fn param_norm(w: &Vector, big_w: &Matrix) -> Result<f64> {
    if big_w.nrows() != w.len() || big_w.ncols() != w.len() {
        return Err(Error::InvalidInput("param_norm dimension mismatch".into()));
    }
    Ok(w.norm() + sym_op_norm(big_w))
}

/// `n` rows `X_j = μ + Σ^{1/2} Z_j`. A singular `Σ` uses its PSD root.
pub fn sample_dataset<R: Rng + ?Sized>(theta: &Param, n: usize, rng: &mut R) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "sample size n = {n}; need n >= 2"
        )));
    }
    let root = psd_sqrt(&theta.sigma)?;
    let noise = NoiseBlock::draw(n, theta.dim(), rng);
    Ok(dataset_from_noise(theta, &root, &noise))
}

/// Rows `μ + root · Z_j` built from a given noise block.
pub fn dataset_from_noise(theta: &Param, root: &Matrix, noise: &NoiseBlock) -> Matrix {
    let mut x = &noise.z * root;
    for mut row in x.row_iter_mut() {
        row += theta.mu.transpose();
    }
    x
}

/// Sample mean and `(n−1)`-normalized sample covariance of the rows.
pub fn estimate_theta(data: &Matrix) -> Result<Param> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "estimate_theta needs at least 2 rows, got {n}"
        )));
    }
    let mu = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let sigma = symmetrize(&(centered.transpose() * &centered / (n - 1) as f64));
    Ok(Param { mu, sigma })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..d {
        if r[(i, i)] < 0.0 {
            let mut col = q.column_mut(i);
            col *= -1.0;
        }
    }
    q
}

/// Random SPD matrix with eigenvalues log-uniform in `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let q = random_orthogonal(d, rng);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let lambda = Vector::from_iterator(
        d,
        (0..d).map(|_| (llo + (lhi - llo) * rng.random::<f64>()).exp()),
    );
    EigenDecomp { q, lambda }.reconstruct()
}
