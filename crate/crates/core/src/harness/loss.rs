use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// Convex symmetric loss `ℓ` with `ℓ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFunction {
    /// `|u|^p`, `p ≥ 1`
    Power { p: f64 },
    /// `e^{|u|} − 1`
    Psi1 {},
    /// `e^{u²} − 1`
    Psi2 {},
}

impl LossFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossFunction::Power { p } if !(p >= 1.0) || !p.is_finite() => Err(
                Error::ConfigValidate(format!("power loss needs finite p >= 1, got {p}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        match *self {
            LossFunction::Power { p } => {
                if p == 2.0 {
                    a * a
                } else if p == 1.0 {
                    a
                } else {
                    a.powf(p)
                }
            }
            LossFunction::Psi1 {} => a.exp_m1(),
            LossFunction::Psi2 {} => (a * a).exp_m1(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            LossFunction::Power { p } => format!("power({p})"),
            LossFunction::Psi1 {} => "psi1".into(),
            LossFunction::Psi2 {} => "psi2".into(),
        }
    }
}

/// Empirical Orlicz norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OrliczNorm {
    Finite {
        value: f64,
    },
    /// No `c` up to the search cap satisfied the constraint; carries the
    /// mean loss reached at the cap.
    Infinite {
        mean_loss_at_cap: f64,
    },
}

impl OrliczNorm {
    pub fn value(&self) -> Option<f64> {
        match *self {
            OrliczNorm::Finite { value } => Some(value),
            OrliczNorm::Infinite { .. } => None,
        }
    }
}

/// Search cap relative to the largest absolute sample.
const CAP_FACTOR: f64 = 1e3;
const REL_TOL: f64 = 1e-12;

/// Smallest `c > 0` with `mean ℓ(|ξ_i| / c) ≤ 1`, by bisection on `log c`.
pub fn orlicz_norm(samples: &[f64], loss: &LossFunction) -> Result<OrliczNorm> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("orlicz_norm of an empty sample".into()));
    }
    loss.validate()?;
    let max = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !max.is_finite() {
        return Err(Error::InvalidInput(
            "orlicz_norm of non-finite samples".into(),
        ));
    }
    if max == 0.0 {
        return Ok(OrliczNorm::Finite { value: 0.0 });
    }
    let mut scratch = vec![0.0; samples.len()];
    let mut mean_loss = |c: f64| {
        for (s, x) in scratch.iter_mut().zip(samples) {
            *s = loss.eval(x / c);
        }
        pairwise_sum(&scratch) / samples.len() as f64
    };

    let cap = CAP_FACTOR * max;
    let at_cap = mean_loss(cap);
    if at_cap > 1.0 {
        return Ok(OrliczNorm::Infinite {
            mean_loss_at_cap: at_cap,
        });
    }
    let mut hi = cap;
    let mut lo = cap;
    while mean_loss(lo) <= 1.0 {
        hi = lo;
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Ok(OrliczNorm::Finite { value: hi });
        }
    }
    while hi / lo - 1.0 > REL_TOL {
        let mid = (lo * hi).sqrt();
        if mean_loss(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(OrliczNorm::Finite { value: hi })
}
