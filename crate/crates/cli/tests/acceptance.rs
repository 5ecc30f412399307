//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Tolerances and sample sizes are pinned below; none of them may be
//! loosened to make a run pass.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use biasreduce::bias::{
    estimate_bk, evaluate_fk, homotopy_exact, homotopy_smoothed, sample_chain, superpose_gk,
    ChainKernel, InnerMc, KernelKind, MCEstimate,
};
use biasreduce::functionals::catalog;
use biasreduce::harness::{
    normality_experiment, orlicz_norm, rate_sweep, ExperimentConfig, LossFunction, SlopeMetric,
};
use biasreduce::model::{
    dataset_from_noise, estimate_theta, gamma_matrix, psd_sqrt, random_orthogonal, random_spd,
    NoiseBlock, Param, SmoothSqrt,
};
use biasreduce::oracles::{bias_identity_max_error, chisq_bj_exact};
use biasreduce::{Executor, StreamKey};

// Criterion 1
const BIAS_IDENTITY_TOL: f64 = 1e-12;
// Criterion 2
const CHISQ_REPLICATES: usize = 100_000;
const Z_MAX: f64 = 4.0;
// Criterion 3
const SWEEP_OUTER: usize = 100_000;
const SWEEP_INNER: usize = 100;
const SWEEP_AUX: usize = 2_000_000;
const SLOPE_K0: (f64, f64) = (-1.0, 0.1);
const SLOPE_K1: (f64, f64) = (-2.0, 0.2);
// Criterion 4
const HOMOTOPY_PAIRS: usize = 1_000;
const HOMOTOPY_TOL: f64 = 1e-10;
// Criterion 5
const GAMMA_GRID: usize = 10_000;
const GAMMA_SQRT_TOL: f64 = 1e-12;
const GAMMA_MATRIX_TOL: f64 = 1e-9;
// Criterion 6
const CHAIN_LAW_DRAWS: usize = 100_000;
// Criterion 7
const NORMALITY_OUTER: usize = 5_000;
const KS_LINEAR: f64 = 0.03;
const KS_TRACE: f64 = 0.05;
const EFFICIENCY_REL: f64 = 0.15;
// Criterion 8
const ORLICZ_SETS: usize = 100;
const ORLICZ_TOL: f64 = 1e-8;
// Criterion 10
const FD_THETAS: usize = 100;
const FD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const SIGMA_F_ROTATION_TOL: f64 = 1e-10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn exec() -> Executor {
    Executor::new(0)
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text, Path::new("acceptance.toml")).expect("valid config")
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn param_diff(a: &Param, b: &Param) -> f64 {
    (&a.mu - &b.mu).abs().max().max(max_abs(&a.sigma, &b.sigma))
}

fn random_theta<R: Rng>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Param {
    let mu = DVector::from_fn(d, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    Param::new(mu, random_spd(d, lo, hi, rng)).unwrap()
}

fn two_sample_z(a: &MCEstimate, b: &MCEstimate) -> f64 {
    let diff = (a.value - b.value).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.stderr.hypot(b.stderr)
}

fn c1_bias_identity() -> Outcome {
    let worst = bias_identity_max_error(&[5, 10, 20]).unwrap();
    outcome(
        worst <= BIAS_IDENTITY_TOL,
        format!("max |enumerated − exact| = {worst:.2e} (tol {BIAS_IDENTITY_TOL:e})"),
    )
}

fn c2_chisq() -> Outcome {
    let theta = Param::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    let f = biasreduce::Functional::trace_quadratic();
    let kernel = ChainKernel::exact();
    let key = StreamKey::new(2002);
    let ex = exec();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for j in 1..=3usize {
        let est = estimate_bk(
            &f,
            &theta,
            j,
            11,
            &kernel,
            CHISQ_REPLICATES,
            key.child(j as u64),
            &ex,
        )
        .unwrap();
        let z = est.z_score(chisq_bj_exact(1.0, 11, j as u32).unwrap());
        worst = worst.max(z);
        parts.push(format!("B^{j}: {:.5}±{:.5}", est.value, est.stderr));
    }
    for (label, mc) in [
        ("plain", InnerMc::plain(CHISQ_REPLICATES)),
        ("cv", InnerMc::new(CHISQ_REPLICATES)),
    ] {
        let est = evaluate_fk(&f, &theta, 1, 11, &kernel, &mc, key.child(10), &ex).unwrap();
        worst = worst.max(est.z_score(0.8));
        parts.push(format!("f_1[{label}]: {:.5}±{:.5}", est.value, est.stderr));
    }
    outcome(
        worst <= Z_MAX,
        format!("{}; max z = {worst:.2} (tol {Z_MAX})", parts.join(", ")),
    )
}

fn sweep_config(k: usize) -> ExperimentConfig {
    let estimator = if k == 0 {
        "k = 0".to_string()
    } else {
        format!("k = {k}\nnoise = \"bartlett\"\ninner_replicates = {SWEEP_INNER}")
    };
    let aux = if k == 0 { 0 } else { SWEEP_AUX };
    config(&format!(
        r#"
        [model]
        d = 1
        n = 11
        a = 2.0
        [functional]
        kind = "trace_quadratic"
        [estimator]
        {estimator}
        [experiment]
        outer_replicates = {SWEEP_OUTER}
        seed = {}
        cv_aux_replicates = {aux}
        [sweep]
        n = [11, 21, 41, 81]
        "#,
        3000 + k
    ))
}

fn c3_bias_order() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (target, tol)) in [(0, SLOPE_K0), (1, SLOPE_K1)] {
        let res = rate_sweep(&sweep_config(k), &exec()).unwrap();
        let fit = res.slopes.iter().find(|s| s.metric == SlopeMetric::BiasVsN);
        match fit {
            Some(s) if s.points == 4 => {
                ok &= (s.slope - target).abs() <= tol;
                parts.push(format!(
                    "k={k}: slope {:.3}±{:.3} (target {target}±{tol})",
                    s.slope, s.stderr
                ));
            }
            other => {
                ok = false;
                parts.push(format!("k={k}: bias not resolved at every n ({other:?})"));
            }
        }
        let ratios: Vec<String> = res
            .reports
            .iter()
            .map(|r| format!("{:.3}", r.bias_cv / r.oracle_bias.unwrap()))
            .collect();
        parts.push(format!("bias/exact = [{}]", ratios.join(", ")));
    }
    outcome(ok, parts.join("; "))
}

fn c4_homotopy_endpoints() -> Outcome {
    let mut rng = StreamKey::new(4004).rng();
    let a = 2.0;
    let (mut at0, mut at1, mut smooth) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..HOMOTOPY_PAIRS {
        let d = rng.random_range(1..=5);
        let n = rng.random_range(2..=30);
        let theta = random_theta(d, 0.1, 10.0, &mut rng);
        let block = NoiseBlock::draw(n, d, &mut rng);
        let stats = block.stats();
        let h0 = homotopy_exact(&theta, 0.0, &stats).unwrap();
        if h0 != theta {
            at0 = f64::INFINITY;
        }
        let h1 = homotopy_exact(&theta, 1.0, &stats).unwrap();
        let root = psd_sqrt(&theta.sigma).unwrap();
        let coupled = estimate_theta(&dataset_from_noise(&theta, &root, &block)).unwrap();
        at1 = at1.max(param_diff(&h1, &coupled));

        let inside = random_theta(d, 1.0 / (2.0 * a), 2.0 * a, &mut rng);
        let t: f64 = rng.random();
        let hs = homotopy_smoothed(&inside, t, &stats, a).unwrap();
        let he = homotopy_exact(&inside, t, &stats).unwrap();
        smooth = smooth.max(param_diff(&hs, &he));
    }
    outcome(
        at0 == 0.0 && at1 <= HOMOTOPY_TOL && smooth <= HOMOTOPY_TOL,
        format!(
            "H(θ;0)=θ exact: {}; t=1 vs coupled estimate {at1:.1e}; smoothed vs exact {smooth:.1e} (tol {HOMOTOPY_TOL:e})",
            at0 == 0.0
        ),
    )
}

fn c5_gamma() -> Outcome {
    let mut ok = true;
    let mut worst_sqrt = 0.0f64;
    let mut worst_matrix = 0.0f64;
    let mut rng = StreamKey::new(5005).rng();
    for a in [1.0, 2.0, 5.0] {
        let g = SmoothSqrt::new(a).unwrap();
        let top = 6.0 * a;
        for i in 0..GAMMA_GRID {
            let u = top * i as f64 / (GAMMA_GRID - 1) as f64;
            let v = g.eval(u);
            ok &= (0.0..=u.sqrt()).contains(&v);
            if (1.0 / (2.0 * a)..=2.0 * a).contains(&u) {
                worst_sqrt = worst_sqrt.max((v - u.sqrt()).abs());
            }
            if u < 1.0 / (4.0 * a) || u > 4.0 * a {
                ok &= v == 0.0;
            }
        }
        for _ in 0..100 {
            let d = rng.random_range(1..=6);
            let sigma = random_spd(d, 1.0 / (2.0 * a), 2.0 * a, &mut rng);
            let gm = gamma_matrix(&sigma, a).unwrap();
            worst_matrix = worst_matrix.max(max_abs(&(&gm * &gm), &sigma));
        }
    }
    ok &= worst_sqrt <= GAMMA_SQRT_TOL && worst_matrix <= GAMMA_MATRIX_TOL;
    outcome(
        ok,
        format!(
            "bounds and support hold on {GAMMA_GRID} points per a ∈ {{1,2,5}}; |γ−√u| {worst_sqrt:.1e}, |γ(Σ)²−Σ| {worst_matrix:.1e}"
        ),
    )
}

fn c6_chain_law() -> Outcome {
    let d = 3;
    let n = 20;
    let theta = Param::new(
        DVector::from_vec(vec![0.3, -0.2, 0.1]),
        random_spd(d, 0.6, 1.6, &mut StreamKey::new(6006).rng()),
    )
    .unwrap();
    let fs = catalog(d);
    let kernel = ChainKernel::exact();
    let ex = exec();
    let superposed_key = StreamKey::new(6007);
    let chain_key = StreamKey::new(6008);
    let means = |vals: Vec<Vec<f64>>| -> Vec<MCEstimate> {
        (0..fs.len())
            .map(|i| {
                let col: Vec<f64> = vals.iter().map(|v| v[i]).collect();
                MCEstimate::from_samples(&col)
            })
            .collect()
    };
    let mut worst = 0.0f64;
    let mut tests = 0;
    for l in 0..=3usize {
        let direct = ex.map_indexed(CHAIN_LAW_DRAWS, |r| {
            let path = sample_chain(
                &theta,
                l,
                n,
                &kernel,
                chain_key.child(l as u64).child(r as u64),
            )
            .unwrap();
            fs.iter()
                .map(|f| f.eval(&path.states[l]).unwrap())
                .collect::<Vec<f64>>()
        });
        let direct = means(direct);
        for mask in 0u32..8 {
            if mask.count_ones() as usize != l {
                continue;
            }
            let t: Vec<f64> = (0..3).map(|j| ((mask >> j) & 1) as f64).collect();
            let vk = superposed_key.child(mask as u64);
            let sup = ex.map_indexed(CHAIN_LAW_DRAWS, |r| {
                let noises: Vec<_> = (0..3)
                    .map(|j| {
                        kernel
                            .noise
                            .draw(n, d, &mut vk.child(r as u64).child(j).rng())
                    })
                    .collect();
                let g = superpose_gk(&theta, &t, &noises, KernelKind::Exact).unwrap();
                fs.iter().map(|f| f.eval(&g).unwrap()).collect::<Vec<f64>>()
            });
            for (a, b) in means(sup).iter().zip(&direct) {
                worst = worst.max(two_sample_z(a, b));
                tests += 1;
            }
        }
    }
    outcome(
        worst <= Z_MAX,
        format!("{tests} comparisons, {CHAIN_LAW_DRAWS} draws each; max two-sample z = {worst:.2} (tol {Z_MAX})"),
    )
}

fn c7_normality() -> Outcome {
    let linear = config(&format!(
        r#"
        [model]
        d = 2
        n = 200
        a = 2.0
        sigma = {{ kind = "diagonal", values = [1.0, 1.5] }}
        [functional]
        kind = "linear_mean"
        u = {{ kind = "unit", index = 0 }}
        [experiment]
        outer_replicates = {NORMALITY_OUTER}
        seed = 7007
        "#
    ));
    let trace = config(&format!(
        r#"
        [model]
        d = 3
        n = 500
        a = 2.0
        sigma = {{ kind = "random_spd", seed = 7, condition = 3.0 }}
        [functional]
        kind = "trace_linear"
        b = {{ kind = "catalog" }}
        [estimator]
        k = 1
        noise = "bartlett"
        inner_replicates = 50
        [experiment]
        outer_replicates = {NORMALITY_OUTER}
        seed = 7008
        "#
    ));
    let a = normality_experiment(&linear.resolve().unwrap(), &exec()).unwrap();
    let b = normality_experiment(&trace.resolve().unwrap(), &exec()).unwrap();
    let ratio = b.report.efficiency_ratio.unwrap();
    outcome(
        a.ks <= KS_LINEAR && b.ks <= KS_TRACE && (ratio - 1.0).abs() <= EFFICIENCY_REL,
        format!(
            "(a) KS {:.4} (tol {KS_LINEAR}); (b) KS {:.4} (tol {KS_TRACE}), n·MSE/σ_f² = {ratio:.4} (tol ±{EFFICIENCY_REL})",
            a.ks, b.ks
        ),
    )
}

fn c8_orlicz() -> Outcome {
    let mut rng = StreamKey::new(8008).rng();
    let (mut rms_err, mut hom_err) = (0.0f64, 0.0f64);
    for _ in 0..ORLICZ_SETS {
        let m = rng.random_range(1..=500);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let xs: Vec<f64> = (0..m)
            .map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let rms = (xs.iter().map(|x| x * x).sum::<f64>() / m as f64).sqrt();
        let l2 = orlicz_norm(&xs, &LossFunction::Power { p: 2.0 })
            .unwrap()
            .value()
            .unwrap();
        rms_err = rms_err.max((l2 - rms).abs() / rms);
        let t = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled: Vec<f64> = xs.iter().map(|x| x * t).collect();
        for loss in [
            LossFunction::Power { p: 1.0 },
            LossFunction::Power { p: 3.0 },
            LossFunction::Psi1 {},
            LossFunction::Psi2 {},
        ] {
            let base = orlicz_norm(&xs, &loss).unwrap().value().unwrap();
            let sc = orlicz_norm(&scaled, &loss).unwrap().value().unwrap();
            hom_err = hom_err.max((sc - t * base).abs() / (t * base));
        }
    }
    outcome(
        rms_err <= ORLICZ_TOL && hom_err <= ORLICZ_TOL,
        format!("power(2) vs RMS {rms_err:.1e}, homogeneity {hom_err:.1e} (tol {ORLICZ_TOL:e})"),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_biasreduce"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let risk_cfg = dir.path().join("risk.toml");
    let sweep_cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &risk_cfg,
        r#"
        losses = [{ kind = "power", p = 2.0 }, { kind = "psi1" }, { kind = "psi2" }]
        [model]
        d = 3
        n = 30
        a = 2.0
        sigma = { kind = "random_spd", seed = 9, condition = 2.0 }
        [functional]
        kind = "spectral_trace"
        phi = { kind = "log" }
        b = { kind = "catalog" }
        [estimator]
        k = 2
        kernel = { kind = "smoothed", a = 2.0 }
        inner_replicates = 20
        [experiment]
        outer_replicates = 400
        seed = 9009
        "#,
    )
    .unwrap();
    std::fs::write(
        &sweep_cfg,
        r#"
        [model]
        d = 1
        n = 11
        a = 2.0
        [functional]
        kind = "trace_quadratic"
        [estimator]
        k = 1
        inner_replicates = 20
        [experiment]
        outer_replicates = 1000
        seed = 9010
        cv_aux_replicates = 5000
        [sweep]
        n = [11, 21]
        d = [1, 2]
        "#,
    )
    .unwrap();
    let mut ok = true;
    let mut files = 0;
    for (cmd, cfg) in [
        ("risk", &risk_cfg),
        ("bias", &risk_cfg),
        ("normality", &risk_cfg),
        ("sweep", &sweep_cfg),
    ] {
        for format in ["csv", "json"] {
            let mut outputs = Vec::new();
            for (run, workers) in [(0, "1"), (1, "1"), (2, "8")] {
                let out = dir.path().join(format!("{cmd}-{run}.{format}"));
                let res = run_cli(&[
                    cmd,
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--format",
                    format,
                    "--workers",
                    workers,
                ]);
                ok &= res.status.success();
                let mut bytes = std::fs::read(&out).unwrap_or_default();
                if cmd == "sweep" {
                    let slopes = out.with_extension(format!("slopes.{format}"));
                    bytes.extend(std::fs::read(slopes).unwrap_or_default());
                }
                outputs.push(bytes);
            }
            ok &= !outputs[0].is_empty() && outputs.iter().all(|o| *o == outputs[0]);
            files += 1;
        }
    }
    outcome(
        ok,
        format!("{files} command/format pairs byte-identical across 2 runs at 1 worker and 1 run at 8 workers"),
    )
}

fn c10_gradients() -> Outcome {
    let mut rng = StreamKey::new(1010).rng();
    let d = 5;
    let fs = catalog(d);
    let (mut fd_worst, mut rot_worst) = (0.0f64, 0.0f64);
    for _ in 0..FD_THETAS {
        let theta = random_theta(d, 0.5, 2.0, &mut rng);
        let q = random_orthogonal(d, &mut rng);
        let rotated = Param::new(&q * &theta.mu, &q * &theta.sigma * q.transpose()).unwrap();
        for f in &fs {
            fd_worst = fd_worst.max(f.fd_check(&theta, FD_STEP, &mut rng).unwrap());
            let s = f.sigma_f(&theta).unwrap();
            let sr = f.rotated(&q).sigma_f(&rotated).unwrap();
            rot_worst = rot_worst.max((s - sr).abs() / s.max(1.0));
        }
    }
    outcome(
        fd_worst <= FD_TOL && rot_worst <= SIGMA_F_ROTATION_TOL,
        format!(
            "{} functionals × {FD_THETAS} θ: fd error {fd_worst:.1e} (tol {FD_TOL:e}), σ_f rotation {rot_worst:.1e} (tol {SIGMA_F_ROTATION_TOL:e})",
            fs.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 10] = [
        (1, "exact bias identity (binomial)", 5, c1_bias_identity),
        (2, "chi-square oracle agreement", 60, c2_chisq),
        (3, "bias-reduction order", 600, c3_bias_order),
        (4, "homotopy endpoint identities", 10, c4_homotopy_endpoints),
        (5, "smoothed square root properties", 5, c5_gamma),
        (6, "bootstrap-chain law", 300, c6_chain_law),
        (7, "efficiency and normality", 900, c7_normality),
        (8, "Orlicz norm", 5, c8_orlicz),
        (9, "determinism", 300, c9_determinism),
        (10, "gradients and sigma_f", 30, c10_gradients),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if let Some(f) = &filter {
            if f.parse::<u32>().ok() != Some(id) {
                continue;
            }
        }
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let passed = o.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s, budget {budget}s]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
