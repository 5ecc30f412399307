//! Experiment configuration (TOML).
//!
//! ```toml
//! losses = [{ kind = "power", p = 2.0 }, { kind = "psi1" }]
//!
//! [model]
//! d = 1
//! n = 11
//! a = 2.0
//! mu = { kind = "zero" }
//! sigma = { kind = "identity" }
//!
//! [functional]
//! kind = "trace_quadratic"
//!
//! [estimator]
//! k = 1                 # or "auto" (uses functional.smoothness)
//! kernel = { kind = "exact" }
//! inner_replicates = 1000
//!
//! [experiment]
//! outer_replicates = 10000
//! seed = 42
//! cv_aux_replicates = 0  # optional, see `risk_eval`
//!
//! [sweep]
//! n = [11, 21, 41, 81]
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::{ChainKernel, ControlVariate, InnerMc, KernelKind};
use crate::error::{Error, Result};
use crate::functionals::{catalog_matrix, default_k_for, Functional, ScalarFn};
use crate::harness::loss::LossFunction;
use crate::model::{random_spd, Matrix, NoiseMode, ParamDomain, Theta, Vector};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub functional: FunctionalSpec,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub losses: Vec<LossFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    pub n: usize,
    pub a: f64,
    #[serde(default)]
    pub mu: MuSpec,
    #[serde(default)]
    pub sigma: SigmaSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    #[default]
    Identity,
    Diagonal {
        values: Vec<f64>,
    },
    /// Random orthogonal basis with eigenvalues log-uniform in
    /// `[condition^{-1/2}, condition^{1/2}]`.
    RandomSpd {
        seed: u64,
        condition: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorSpec {
    Unit { index: usize },
    Ones,
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Identity,
    Diagonal {
        values: Vec<f64>,
    },
    /// Row-major entries.
    Full {
        rows: Vec<Vec<f64>>,
    },
    /// The fixed coupling matrix used by the functional catalog.
    Catalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKindName {
    LinearMean,
    QuadraticMean,
    TraceLinear,
    TraceQuadratic,
    SpectralTrace,
    AffineCombination,
}

/// Functional block. Which optional fields are allowed depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalSpec {
    pub kind: FunctionalKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<VectorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<ScalarFn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub weight: f64,
    pub functional: FunctionalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSpec {
    Fixed(usize),
    Named(AutoK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoK {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    #[serde(default = "default_k")]
    pub k: KSpec,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default = "default_inner")]
    pub inner_replicates: usize,
    #[serde(default)]
    pub control_variate: ControlVariate,
}

fn default_k() -> KSpec {
    KSpec::Fixed(0)
}

fn default_kernel() -> KernelKind {
    KernelKind::Exact
}

fn default_inner() -> usize {
    10_000
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        EstimatorBlock {
            k: default_k(),
            kernel: default_kernel(),
            noise: NoiseMode::default(),
            inner_replicates: default_inner(),
            control_variate: ControlVariate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub outer_replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Extra draws of `θ̂` used to estimate the mean of the plug-in control
    /// variate `f(θ̂) − f(θ)`. Zero keeps only the linear control variate.
    #[serde(default)]
    pub cv_aux_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub d: Vec<usize>,
}

/// A validated experiment at one `(n, d)` point.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub theta: Theta,
    pub functional: Functional,
    pub functional_name: String,
    pub theta_desc: String,
    pub domain: ParamDomain,
    pub n: usize,
    pub k: usize,
    pub kernel: ChainKernel,
    pub inner: InnerMc,
    pub outer_replicates: usize,
    pub cv_aux_replicates: usize,
    pub seed: u64,
    pub losses: Vec<LossFunction>,
    pub config_hash: String,
}

impl Experiment {
    pub fn root_key(&self) -> StreamKey {
        StreamKey::new(self.seed)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string().trim().replace('\n', " "),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> Option<u64> {
        self.experiment.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = Some(seed);
        self
    }

    /// The same config at a different `(n, d)`.
    pub fn at_point(&self, n: usize, d: usize) -> Self {
        let mut c = self.clone();
        c.model.n = n;
        c.model.d = d;
        c.sweep = None;
        c
    }

    /// Grid points `(n, d)`, `d` outermost. Without a sweep block this is
    /// the single model point.
    pub fn grid(&self) -> Result<Vec<(usize, usize)>> {
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(self.model.n, self.model.d)]);
        };
        let ns = if sweep.n.is_empty() {
            vec![self.model.n]
        } else {
            sweep.n.clone()
        };
        let ds = if sweep.d.is_empty() {
            vec![self.model.d]
        } else {
            sweep.d.clone()
        };
        if sweep.n.is_empty() && sweep.d.is_empty() {
            return Err(Error::ConfigValidate("sweep grid is empty".into()));
        }
        Ok(ds
            .iter()
            .flat_map(|&d| ns.iter().map(move |&n| (n, d)))
            .collect())
    }

    /// Validates the config and builds the experiment at the model point.
    /// The seed must already be resolved.
    pub fn resolve(&self) -> Result<Experiment> {
        let m = &self.model;
        let seed = self
            .experiment
            .seed
            .ok_or_else(|| Error::ConfigValidate("no seed given".into()))?;
        let domain =
            ParamDomain::new(m.a, m.d).map_err(|e| Error::ConfigValidate(e.to_string()))?;
        if m.n < 2 {
            return Err(Error::ConfigValidate(format!(
                "model.n = {} must be >= 2",
                m.n
            )));
        }
        let mu = build_mu(&m.mu, m.d)?;
        let sigma = build_sigma(&m.sigma, m.d)?;
        let theta = Theta::new(mu, sigma).map_err(|e| Error::ConfigValidate(e.to_string()))?;
        if !domain.contains(&theta) {
            return Err(Error::ConfigValidate(format!(
                "theta is outside Theta(a = {}; d = {}): covariance spectrum not in [1/a, a]",
                m.a, m.d
            )));
        }
        let functional = build_functional(&self.functional, m.d)?;
        functional
            .eval(&theta)
            .map_err(|e| Error::ConfigValidate(format!("functional at theta: {e}")))?;
        let k = match self.estimator.k {
            KSpec::Fixed(k) => k,
            KSpec::Named(AutoK::Auto) => default_k_for(functional.smoothness).ok_or_else(|| {
                Error::ConfigValidate("k = \"auto\" needs a finite functional.smoothness".into())
            })?,
        };
        let kernel = ChainKernel {
            kind: self.estimator.kernel,
            noise: self.estimator.noise,
        };
        kernel
            .kind
            .validate()
            .map_err(|e| Error::ConfigValidate(e.to_string()))?;
        if k > 0 && self.estimator.inner_replicates < 2 {
            return Err(Error::ConfigValidate(
                "estimator.inner_replicates must be >= 2 when k > 0".into(),
            ));
        }
        if self.experiment.outer_replicates < 2 {
            return Err(Error::ConfigValidate(
                "experiment.outer_replicates must be >= 2".into(),
            ));
        }
        for loss in &self.losses {
            loss.validate()?;
        }
        Ok(Experiment {
            functional_name: functional.name(),
            theta_desc: describe_theta(&m.mu, &m.sigma),
            theta,
            functional,
            domain,
            n: m.n,
            k,
            kernel,
            inner: InnerMc {
                replicates: self.estimator.inner_replicates,
                control_variate: self.estimator.control_variate,
            },
            outer_replicates: self.experiment.outer_replicates,
            cv_aux_replicates: self.experiment.cv_aux_replicates,
            seed,
            losses: self.losses.clone(),
            config_hash: self.hash(),
        })
    }
}

fn describe_theta(mu: &MuSpec, sigma: &SigmaSpec) -> String {
    let mu = match mu {
        MuSpec::Zero => "zero".to_string(),
        MuSpec::Constant { value } => format!("constant({value})"),
        MuSpec::Values { values } => format!("values({values:?})"),
    };
    let sigma = match sigma {
        SigmaSpec::Identity => "identity".to_string(),
        SigmaSpec::Diagonal { values } => format!("diagonal({values:?})"),
        SigmaSpec::RandomSpd { seed, condition } => {
            format!("random_spd(seed={seed},condition={condition})")
        }
    };
    format!("mu={mu};sigma={sigma}")
}

fn length_error(what: &str, got: usize, d: usize) -> Error {
    Error::ConfigValidate(format!("{what} has length {got} but d = {d}"))
}

fn build_mu(spec: &MuSpec, d: usize) -> Result<Vector> {
    Ok(match spec {
        MuSpec::Zero => Vector::zeros(d),
        MuSpec::Constant { value } => Vector::from_element(d, *value),
        MuSpec::Values { values } => {
            if values.len() != d {
                return Err(length_error("model.mu.values", values.len(), d));
            }
            Vector::from_column_slice(values)
        }
    })
}

fn build_sigma(spec: &SigmaSpec, d: usize) -> Result<Matrix> {
    Ok(match spec {
        SigmaSpec::Identity => Matrix::identity(d, d),
        SigmaSpec::Diagonal { values } => {
            if values.len() != d {
                return Err(length_error("model.sigma.values", values.len(), d));
            }
            Matrix::from_diagonal(&Vector::from_column_slice(values))
        }
        SigmaSpec::RandomSpd { seed, condition } => {
            if !(*condition >= 1.0) || !condition.is_finite() {
                return Err(Error::ConfigValidate(format!(
                    "random_spd condition {condition} must be >= 1"
                )));
            }
            let half = condition.sqrt();
            random_spd(d, 1.0 / half, half, &mut StreamKey::new(*seed).rng())
        }
    })
}

fn build_vector(spec: &VectorSpec, d: usize) -> Result<Vector> {
    Ok(match spec {
        VectorSpec::Unit { index } => {
            if *index >= d {
                return Err(Error::ConfigValidate(format!(
                    "unit vector index {index} out of range for d = {d}"
                )));
            }
            let mut v = Vector::zeros(d);
            v[*index] = 1.0;
            v
        }
        VectorSpec::Ones => Vector::from_element(d, 1.0),
        VectorSpec::Values { values } => {
            if values.len() != d {
                return Err(length_error("functional.u.values", values.len(), d));
            }
            Vector::from_column_slice(values)
        }
    })
}

fn build_matrix(spec: &MatrixSpec, d: usize) -> Result<Matrix> {
    Ok(match spec {
        MatrixSpec::Identity => Matrix::identity(d, d),
        MatrixSpec::Diagonal { values } => {
            if values.len() != d {
                return Err(length_error("functional.b.values", values.len(), d));
            }
            Matrix::from_diagonal(&Vector::from_column_slice(values))
        }
        MatrixSpec::Full { rows } => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::ConfigValidate(format!(
                    "functional.b.rows must be {d}x{d}"
                )));
            }
            Matrix::from_fn(d, d, |i, j| rows[i][j])
        }
        MatrixSpec::Catalog => catalog_matrix(d),
    })
}

fn build_functional(spec: &FunctionalSpec, d: usize) -> Result<Functional> {
    use FunctionalKindName as K;
    let allowed: &[&str] = match spec.kind {
        K::LinearMean => &["u"],
        K::QuadraticMean | K::TraceQuadratic => &[],
        K::TraceLinear => &["b"],
        K::SpectralTrace => &["phi", "b"],
        K::AffineCombination => &["offset", "terms"],
    };
    let present = [
        ("u", spec.u.is_some()),
        ("b", spec.b.is_some()),
        ("phi", spec.phi.is_some()),
        ("offset", spec.offset.is_some()),
        ("terms", spec.terms.is_some()),
    ];
    for (name, is_set) in present {
        if is_set && !allowed.contains(&name) {
            return Err(Error::ConfigValidate(format!(
                "functional field `{name}` is not used by kind {:?}",
                spec.kind
            )));
        }
    }
    let missing = |name: &str| {
        Error::ConfigValidate(format!("functional kind {:?} needs `{name}`", spec.kind))
    };
    let f = match spec.kind {
        K::LinearMean => Functional::linear_mean(build_vector(
            spec.u.as_ref().ok_or_else(|| missing("u"))?,
            d,
        )?),
        K::QuadraticMean => Functional::quadratic_mean(),
        K::TraceLinear => Functional::trace_linear(build_matrix(
            spec.b.as_ref().ok_or_else(|| missing("b"))?,
            d,
        )?),
        K::TraceQuadratic => Functional::trace_quadratic(),
        K::SpectralTrace => {
            let phi = spec.phi.ok_or_else(|| missing("phi"))?;
            let b = match &spec.b {
                Some(b) => build_matrix(b, d)?,
                None => Matrix::identity(d, d),
            };
            Functional::spectral_trace(phi, b)
        }
        K::AffineCombination => {
            let terms = spec
                .terms
                .as_ref()
                .ok_or_else(|| missing("terms"))?
                .iter()
                .map(|t| Ok((t.weight, build_functional(&t.functional, d)?)))
                .collect::<Result<Vec<_>>>()?;
            Functional::affine(spec.offset.unwrap_or(0.0), terms)
        }
    };
    Ok(match spec.smoothness {
        Some(s) if s > 0.0 => f.with_smoothness(s),
        Some(s) => {
            return Err(Error::ConfigValidate(format!(
                "functional.smoothness = {s} must be positive"
            )))
        }
        None => f,
    })
}

/// A fresh seed for runs that did not specify one. Kept below 2^53 so it
/// survives a round trip through JSON numbers.
pub fn generate_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let key = StreamKey::new(nanos).child(std::process::id() as u64);
    key.rng().next_u64() & ((1u64 << 53) - 1)
}
