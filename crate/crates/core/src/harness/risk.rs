//! Risk, bias, normality and rate-sweep experiments.
//!
//! Outer replicate `r` uses `root.child(r)`: the dataset comes from
//! `.child(0)` and the inner chains of the estimator from `.child(1)`.
//! Outer replicates run on the executor; the inner chains of one replicate
//! run sequentially on the same worker.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bias::{evaluate_fk, homotopy_exact, KernelKind};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::functionals::FunctionalKind;
use crate::harness::config::{Experiment, ExperimentConfig};
use crate::harness::ks::ks_normal;
use crate::harness::loss::{orlicz_norm, LossFunction, OrliczNorm};
use crate::model::{estimate_theta, sample_dataset};
use crate::rng::StreamKey;
use crate::stats::{least_squares, mean, mean_stderr, sample_variance};

/// Stream reserved for the auxiliary control-variate draws.
const AUX_STREAM: u64 = u64::MAX;
/// Batches used for the Orlicz-norm standard error.
const ORLICZ_BATCHES: usize = 20;
/// Above this share of inner Monte Carlo variance a warning is logged.
const INNER_NOISE_WARN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrliczEntry {
    pub loss: LossFunction,
    pub norm: OrliczNorm,
    /// Batch-means standard error; absent when a batch norm is infinite.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub functional: String,
    pub d: usize,
    pub n: usize,
    pub a: f64,
    pub theta: String,
    pub k: usize,
    pub kernel: String,
    pub replicates: usize,
    pub inner_replicates: usize,
    pub f_true: f64,
    pub bias: f64,
    pub bias_stderr: f64,
    /// Bias with control variates applied (same expectation, lower variance).
    pub bias_cv: f64,
    pub bias_cv_stderr: f64,
    pub cv_aux_replicates: usize,
    pub rmse: f64,
    pub rmse_stderr: f64,
    pub orlicz: Vec<OrliczEntry>,
    pub sigma_f_true: f64,
    /// `n · MSE / σ_f²`; absent when `σ_f = 0`.
    pub efficiency_ratio: Option<f64>,
    /// Mean inner-MC variance over the total error variance; absent for `k = 0`.
    pub inner_noise_fraction: Option<f64>,
    /// Exact bias, when known in closed form.
    pub oracle_bias: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    /// Not part of the data files; the CLI moves it to the sidecar log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl RiskReport {
    /// Sanity relation `rmse ≥ |bias| − 2·stderr`.
    pub fn is_consistent(&self) -> bool {
        self.rmse >= self.bias.abs() - 2.0 * self.bias_stderr
    }
}

/// Bias with a 95% normal confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub functional: String,
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub kernel: String,
    pub replicates: usize,
    pub inner_replicates: usize,
    pub bias: f64,
    pub bias_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bias_cv: f64,
    pub bias_cv_stderr: f64,
    pub oracle_bias: Option<f64>,
    pub inner_noise_fraction: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl From<&RiskReport> for BiasReport {
    fn from(r: &RiskReport) -> Self {
        BiasReport {
            functional: r.functional.clone(),
            d: r.d,
            n: r.n,
            k: r.k,
            kernel: r.kernel.clone(),
            replicates: r.replicates,
            inner_replicates: r.inner_replicates,
            bias: r.bias,
            bias_stderr: r.bias_stderr,
            ci_low: r.bias - 1.96 * r.bias_stderr,
            ci_high: r.bias + 1.96 * r.bias_stderr,
            bias_cv: r.bias_cv,
            bias_cv_stderr: r.bias_cv_stderr,
            oracle_bias: r.oracle_bias,
            inner_noise_fraction: r.inner_noise_fraction,
            seed: r.seed,
            config_hash: r.config_hash.clone(),
        }
    }
}

struct Outer {
    /// `f_k(θ̂) − f(θ)`
    error: f64,
    /// Control-variate term subtracted from `error`.
    cv: f64,
    inner_var: f64,
}

fn run_outer(exp: &Experiment, key: StreamKey, exec: &Executor) -> Result<(Vec<Outer>, f64)> {
    let theta = exp.theta.param();
    let f = &exp.functional;
    let f_true = f.eval(theta)?;
    let grad = f.grad(theta)?;
    let plug_in = exp.cv_aux_replicates > 0;
    let inner_exec = Executor::sequential();
    let outer = exec.try_map_indexed(exp.outer_replicates, |r| {
        let kr = key.child(r as u64);
        let data = sample_dataset(theta, exp.n, &mut kr.child(0).rng())?;
        let theta_hat = estimate_theta(&data)?;
        let est = evaluate_fk(
            f,
            &theta_hat,
            exp.k,
            exp.n,
            &exp.kernel,
            &exp.inner,
            kr.child(1),
            &inner_exec,
        )?;
        let cv = if plug_in {
            f.eval(&theta_hat)? - f_true
        } else {
            grad.apply(
                &(&theta_hat.mu - &theta.mu),
                &(&theta_hat.sigma - &theta.sigma),
            )
        };
        Ok::<_, Error>(Outer {
            error: est.value - f_true,
            cv,
            inner_var: est.stderr * est.stderr,
        })
    })?;
    Ok((outer, f_true))
}

/// Mean and stderr of `f(θ̂) − f(θ)` over independent draws of `θ̂`, with
/// the linear term removed (it has mean zero).
fn plug_in_mean(exp: &Experiment, key: StreamKey, exec: &Executor) -> Result<(f64, f64)> {
    let theta = exp.theta.param();
    let f = &exp.functional;
    let f_true = f.eval(theta)?;
    let grad = f.grad(theta)?;
    let d = theta.dim();
    let samples = exec.try_map_indexed(exp.cv_aux_replicates, |i| {
        let noise = exp
            .kernel
            .noise
            .draw(exp.n, d, &mut key.child(i as u64).rng());
        let th = homotopy_exact(theta, 1.0, &noise)?;
        let lin = grad.apply(&(&th.mu - &theta.mu), &(&th.sigma - &theta.sigma));
        Ok::<_, Error>(f.eval(&th)? - f_true - lin)
    })?;
    Ok(mean_stderr(&samples))
}

fn orlicz_with_stderr(errors: &[f64], loss: &LossFunction) -> Result<OrliczEntry> {
    let norm = orlicz_norm(errors, loss)?;
    let batch = errors.len() / ORLICZ_BATCHES;
    let stderr = if batch >= 2 {
        let mut values = Vec::with_capacity(ORLICZ_BATCHES);
        for b in 0..ORLICZ_BATCHES {
            match orlicz_norm(&errors[b * batch..(b + 1) * batch], loss)?.value() {
                Some(v) => values.push(v),
                None => break,
            }
        }
        // a batch of size m has roughly M/m times the variance of the full sample
        (values.len() == ORLICZ_BATCHES)
            .then(|| (sample_variance(&values) / ORLICZ_BATCHES as f64).sqrt())
    } else {
        None
    };
    Ok(OrliczEntry {
        loss: *loss,
        norm,
        stderr,
    })
}

/// Exact bias of `f_k(θ̂)` for `f = σ⁴` in one dimension with the exact
/// kernel: `(−1)^k (2/(n−1))^{k+1} σ⁴`.
fn oracle_bias(exp: &Experiment, f_true: f64) -> Option<f64> {
    let is_sigma4 = matches!(exp.functional.kind, FunctionalKind::TraceQuadratic);
    if !is_sigma4 || exp.theta.dim() != 1 || exp.kernel.kind != KernelKind::Exact {
        return None;
    }
    let c = 2.0 / (exp.n - 1) as f64;
    let sign = if exp.k.is_multiple_of(2) { 1.0 } else { -1.0 };
    Some(sign * c.powi(exp.k as i32 + 1) * f_true)
}

/// Runs the outer loop and returns the report plus the raw errors.
fn evaluate(exp: &Experiment, key: StreamKey, exec: &Executor) -> Result<(RiskReport, Vec<f64>)> {
    let start = Instant::now();
    let (outer, f_true) = run_outer(exp, key, exec)?;
    let errors: Vec<f64> = outer.iter().map(|o| o.error).collect();
    let m = errors.len() as f64;

    let (bias, bias_stderr) = mean_stderr(&errors);
    let residual: Vec<f64> = outer.iter().map(|o| o.error - o.cv).collect();
    let (mut bias_cv, mut bias_cv_stderr) = mean_stderr(&residual);
    if exp.cv_aux_replicates > 0 {
        let (aux, aux_se) = plug_in_mean(exp, key.child(AUX_STREAM), exec)?;
        bias_cv += aux;
        bias_cv_stderr = bias_cv_stderr.hypot(aux_se);
    }

    let squares: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let (mse, mse_stderr) = mean_stderr(&squares);
    let rmse = mse.sqrt();
    let rmse_stderr = if rmse > 0.0 {
        mse_stderr / (2.0 * rmse)
    } else {
        0.0
    };

    let orlicz = exp
        .losses
        .iter()
        .map(|l| orlicz_with_stderr(&errors, l))
        .collect::<Result<Vec<_>>>()?;

    let sigma_f = exp.functional.sigma_f(exp.theta.param())?;
    let efficiency_ratio = (sigma_f > 0.0).then(|| exp.n as f64 * mse / (sigma_f * sigma_f));

    let inner_noise_fraction = if exp.k > 0 {
        let inner: Vec<f64> = outer.iter().map(|o| o.inner_var).collect();
        let total = sample_variance(&errors);
        let frac = if total > 0.0 {
            mean(&inner) / total
        } else {
            0.0
        };
        if frac > INNER_NOISE_WARN {
            log::warn!(
                "inner Monte Carlo noise is {:.0}% of the error variance (n = {}, R = {}); \
                 consider more inner replicates",
                100.0 * frac,
                exp.n,
                exp.inner.replicates
            );
        }
        Some(frac)
    } else {
        None
    };

    log::debug!(
        "risk n={} d={} k={} M={}: bias {bias:.3e} ± {bias_stderr:.1e}, rmse {rmse:.3e}",
        exp.n,
        exp.theta.dim(),
        exp.k,
        m
    );

    let report = RiskReport {
        functional: exp.functional_name.clone(),
        d: exp.theta.dim(),
        n: exp.n,
        a: exp.domain.a,
        theta: exp.theta_desc.clone(),
        k: exp.k,
        kernel: exp.kernel.kind.label(),
        replicates: exp.outer_replicates,
        inner_replicates: if exp.k == 0 { 0 } else { exp.inner.replicates },
        f_true,
        bias,
        bias_stderr,
        bias_cv,
        bias_cv_stderr,
        cv_aux_replicates: exp.cv_aux_replicates,
        rmse,
        rmse_stderr,
        orlicz,
        sigma_f_true: sigma_f,
        efficiency_ratio,
        inner_noise_fraction,
        oracle_bias: oracle_bias(exp, f_true),
        ks_statistic: None,
        seed: exp.seed,
        config_hash: exp.config_hash.clone(),
        wall_time_s: Some(start.elapsed().as_secs_f64()),
    };
    Ok((report, errors))
}

/// `M` outer replicates of `f_k(θ̂) − f(θ)`, summarized.
pub fn risk_eval(exp: &Experiment, exec: &Executor) -> Result<RiskReport> {
    Ok(evaluate(exp, exp.root_key(), exec)?.0)
}

pub fn bias_eval(exp: &Experiment, exec: &Executor) -> Result<BiasReport> {
    Ok(BiasReport::from(&risk_eval(exp, exec)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityResult {
    pub ks: f64,
    /// `√n (f_k(θ̂) − f(θ)) / σ_f(θ)` per outer replicate.
    pub standardized: Vec<f64>,
    pub report: RiskReport,
}

/// Standardized errors and their KS distance to `N(0, 1)`.
pub fn normality_experiment(exp: &Experiment, exec: &Executor) -> Result<NormalityResult> {
    let sigma_f = exp.functional.sigma_f(exp.theta.param())?;
    if !(sigma_f >= 1e-8) {
        return Err(Error::DegenerateSigmaF(sigma_f));
    }
    let (mut report, errors) = evaluate(exp, exp.root_key(), exec)?;
    let scale = (exp.n as f64).sqrt() / sigma_f;
    let standardized: Vec<f64> = errors.iter().map(|e| e * scale).collect();
    let ks = ks_normal(&standardized)?;
    report.ks_statistic = Some(ks);
    Ok(NormalityResult {
        ks,
        standardized,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMetric {
    /// `log RMSE` against `log n` at fixed `d`.
    RmseVsN,
    /// `log |bias_cv|` against `log n` at fixed `d`.
    BiasVsN,
    /// `log |bias_cv|` against `log(d/n)` over the whole grid.
    BiasVsDOverN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub metric: SlopeMetric,
    pub d: Option<usize>,
    pub slope: f64,
    pub stderr: f64,
    /// Grid points that entered the fit.
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub reports: Vec<RiskReport>,
    pub slopes: Vec<SlopeFit>,
}

/// Slope of `y` on `x` with a standard error that combines the regression
/// residuals and the per-point uncertainties `sy` (delta method).
fn fit(x: &[f64], y: &[f64], sy: &[f64]) -> Option<(f64, f64)> {
    let line = least_squares(x, y)?;
    let mx = mean(x);
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let propagated: f64 = x
        .iter()
        .zip(sy)
        .map(|(xi, s)| ((xi - mx) / sxx * s).powi(2))
        .sum();
    Some((line.slope, line.slope_stderr.hypot(propagated.sqrt())))
}

/// A bias point enters a fit only if it is resolved: `|bias| > 2·stderr`.
fn bias_point(r: &RiskReport) -> Option<(f64, f64)> {
    let b = r.bias_cv.abs();
    (b > 2.0 * r.bias_cv_stderr).then(|| (b.ln(), r.bias_cv_stderr / b))
}

pub fn fit_slopes(reports: &[RiskReport]) -> Vec<SlopeFit> {
    let mut out = Vec::new();
    let mut ds: Vec<usize> = reports.iter().map(|r| r.d).collect();
    ds.sort_unstable();
    ds.dedup();
    for &d in &ds {
        let at_d: Vec<&RiskReport> = reports.iter().filter(|r| r.d == d).collect();
        let rmse: Vec<&&RiskReport> = at_d.iter().filter(|r| r.rmse > 0.0).collect();
        let x: Vec<f64> = rmse.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rmse.iter().map(|r| r.rmse.ln()).collect();
        let sy: Vec<f64> = rmse.iter().map(|r| r.rmse_stderr / r.rmse).collect();
        if let Some((slope, stderr)) = fit(&x, &y, &sy) {
            out.push(SlopeFit {
                metric: SlopeMetric::RmseVsN,
                d: Some(d),
                slope,
                stderr,
                points: x.len(),
            });
        }
        let (mut x, mut y, mut sy) = (vec![], vec![], vec![]);
        for r in &at_d {
            if let Some((ly, s)) = bias_point(r) {
                x.push((r.n as f64).ln());
                y.push(ly);
                sy.push(s);
            }
        }
        if let Some((slope, stderr)) = fit(&x, &y, &sy) {
            out.push(SlopeFit {
                metric: SlopeMetric::BiasVsN,
                d: Some(d),
                slope,
                stderr,
                points: x.len(),
            });
        }
    }
    if ds.len() > 1 {
        let (mut x, mut y, mut sy) = (vec![], vec![], vec![]);
        for r in reports {
            if let Some((ly, s)) = bias_point(r) {
                x.push((r.d as f64 / r.n as f64).ln());
                y.push(ly);
                sy.push(s);
            }
        }
        if let Some((slope, stderr)) = fit(&x, &y, &sy) {
            out.push(SlopeFit {
                metric: SlopeMetric::BiasVsDOverN,
                d: None,
                slope,
                stderr,
                points: x.len(),
            });
        }
    }
    out
}

/// One report per grid point; point `i` uses `root.child(i)`. Every report
/// carries the hash of the full sweep config.
pub fn rate_sweep(cfg: &ExperimentConfig, exec: &Executor) -> Result<SweepResult> {
    let grid = cfg.grid()?;
    if grid.is_empty() {
        return Err(Error::ConfigValidate("sweep grid is empty".into()));
    }
    let hash = cfg.hash();
    let mut reports = Vec::with_capacity(grid.len());
    for (i, &(n, d)) in grid.iter().enumerate() {
        let mut exp = cfg.at_point(n, d).resolve()?;
        exp.config_hash = hash.clone();
        log::info!("sweep point {}/{}: n = {n}, d = {d}", i + 1, grid.len());
        let (report, _) = evaluate(&exp, exp.root_key().child(i as u64), exec)?;
        reports.push(report);
    }
    let slopes = fit_slopes(&reports);
    Ok(SweepResult { reports, slopes })
}
