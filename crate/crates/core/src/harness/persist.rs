//! CSV and JSON output.
//!
//! CSV files always start with a header row, so an empty table is a
//! header-only file. Floats use Rust's shortest round-trip formatting and
//! absent optional values are empty cells. JSON writes one object per
//! report, or an array for tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::loss::OrliczNorm;
use crate::harness::risk::{BiasReport, OrliczEntry, RiskReport, SlopeFit, SlopeMetric};
use crate::oracles::OracleOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidInput(format!("unknown format `{other}`"))),
        }
    }
}

/// A type with a fixed CSV column layout.
pub trait CsvRow {
    fn header() -> &'static [&'static str];
    fn row(&self) -> Vec<String>;
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `label=value:stderr` entries joined by `;`. An infinite norm is written
/// as `inf(<mean loss at cap>)`; a missing stderr leaves the part after `:`
/// empty.
pub fn encode_orlicz(entries: &[OrliczEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            let value = match e.norm {
                OrliczNorm::Finite { value } => value.to_string(),
                OrliczNorm::Infinite { mean_loss_at_cap } => format!("inf({mean_loss_at_cap})"),
            };
            format!("{}={}:{}", e.loss.label(), value, opt(e.stderr))
        })
        .collect::<Vec<_>>()
        .join(";")
}

impl CsvRow for RiskReport {
    fn header() -> &'static [&'static str] {
        &[
            "functional",
            "d",
            "n",
            "a",
            "theta",
            "k",
            "kernel",
            "replicates",
            "inner_replicates",
            "f_true",
            "bias",
            "bias_stderr",
            "bias_cv",
            "bias_cv_stderr",
            "cv_aux_replicates",
            "rmse",
            "rmse_stderr",
            "orlicz",
            "sigma_f_true",
            "efficiency_ratio",
            "inner_noise_fraction",
            "oracle_bias",
            "ks_statistic",
            "seed",
            "config_hash",
        ]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.functional.clone(),
            self.d.to_string(),
            self.n.to_string(),
            self.a.to_string(),
            self.theta.clone(),
            self.k.to_string(),
            self.kernel.clone(),
            self.replicates.to_string(),
            self.inner_replicates.to_string(),
            self.f_true.to_string(),
            self.bias.to_string(),
            self.bias_stderr.to_string(),
            self.bias_cv.to_string(),
            self.bias_cv_stderr.to_string(),
            self.cv_aux_replicates.to_string(),
            self.rmse.to_string(),
            self.rmse_stderr.to_string(),
            encode_orlicz(&self.orlicz),
            self.sigma_f_true.to_string(),
            opt(self.efficiency_ratio),
            opt(self.inner_noise_fraction),
            opt(self.oracle_bias),
            opt(self.ks_statistic),
            self.seed.to_string(),
            self.config_hash.clone(),
        ]
    }
}

impl CsvRow for BiasReport {
    fn header() -> &'static [&'static str] {
        &[
            "functional",
            "d",
            "n",
            "k",
            "kernel",
            "replicates",
            "inner_replicates",
            "bias",
            "bias_stderr",
            "ci_low",
            "ci_high",
            "bias_cv",
            "bias_cv_stderr",
            "oracle_bias",
            "inner_noise_fraction",
            "seed",
            "config_hash",
        ]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.functional.clone(),
            self.d.to_string(),
            self.n.to_string(),
            self.k.to_string(),
            self.kernel.clone(),
            self.replicates.to_string(),
            self.inner_replicates.to_string(),
            self.bias.to_string(),
            self.bias_stderr.to_string(),
            self.ci_low.to_string(),
            self.ci_high.to_string(),
            self.bias_cv.to_string(),
            self.bias_cv_stderr.to_string(),
            opt(self.oracle_bias),
            opt(self.inner_noise_fraction),
            self.seed.to_string(),
            self.config_hash.clone(),
        ]
    }
}

impl CsvRow for SlopeFit {
    fn header() -> &'static [&'static str] {
        &["metric", "d", "slope", "stderr", "points"]
    }

    fn row(&self) -> Vec<String> {
        let metric = match self.metric {
            SlopeMetric::RmseVsN => "rmse_vs_n",
            SlopeMetric::BiasVsN => "bias_vs_n",
            SlopeMetric::BiasVsDOverN => "bias_vs_d_over_n",
        };
        vec![
            metric.to_string(),
            self.d.map(|d| d.to_string()).unwrap_or_default(),
            self.slope.to_string(),
            self.stderr.to_string(),
            self.points.to_string(),
        ]
    }
}

impl CsvRow for OracleOutcome {
    fn header() -> &'static [&'static str] {
        &["name", "passed", "detail"]
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            self.passed.to_string(),
            self.detail.clone(),
        ]
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialize(format!("{other:?}")),
    }
}

/// Header row plus one row per item.
pub fn write_csv_to<T: CsvRow, W: Write>(items: &[T], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(T::header())?;
    for item in items {
        w.write_record(item.row())?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json_to<T: Serialize + ?Sized, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Serialize(e.to_string()))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_csv<T: CsvRow>(items: &[T], path: &Path) -> Result<()> {
    write_csv_to(items, create(path)?).map_err(|e| csv_error(path, e))
}

fn write_json_value<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Serialize(e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// A single report: one CSV row, or one JSON object.
pub fn write_one<T: CsvRow + Serialize>(item: &T, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(std::slice::from_ref(item), path),
        Format::Json => write_json_value(item, path),
    }
}

/// A table: CSV rows, or a JSON array.
pub fn write_many<T: CsvRow + Serialize>(items: &[T], path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(items, path),
        Format::Json => write_json_value(items, path),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::loss::LossFunction;

    fn report() -> RiskReport {
        RiskReport {
            functional: "trace_quadratic".into(),
            d: 1,
            n: 11,
            a: 2.0,
            theta: "mu=zero;sigma=identity".into(),
            k: 1,
            kernel: "exact".into(),
            replicates: 1000,
            inner_replicates: 100,
            f_true: 1.0,
            bias: -0.041,
            bias_stderr: 0.003,
            bias_cv: -0.0399,
            bias_cv_stderr: 0.001,
            cv_aux_replicates: 0,
            rmse: 0.61,
            rmse_stderr: 0.01,
            orlicz: vec![
                OrliczEntry {
                    loss: LossFunction::Power { p: 2.0 },
                    norm: OrliczNorm::Finite { value: 0.61 },
                    stderr: Some(0.02),
                },
                OrliczEntry {
                    loss: LossFunction::Psi2 {},
                    norm: OrliczNorm::Infinite {
                        mean_loss_at_cap: 1.5,
                    },
                    stderr: None,
                },
            ],
            sigma_f_true: 2.0,
            efficiency_ratio: Some(1.02),
            inner_noise_fraction: Some(0.01),
            oracle_bias: Some(-0.04),
            ks_statistic: None,
            seed: 42,
            config_hash: "ab".repeat(32),
            wall_time_s: None,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv::<RiskReport>(&[], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, format!("{}\n", RiskReport::header().join(",")));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = report();
        write_one(&r, &p, Format::Json).unwrap();
        let back: RiskReport = read_json(&p).unwrap();
        assert_eq!(back, r);

        let many = vec![r.clone(), r];
        write_many(&many, &p, Format::Json).unwrap();
        let back: Vec<RiskReport> = read_json(&p).unwrap();
        assert_eq!(back, many);
    }

    #[test]
    fn csv_rows_and_quoting() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut r = report();
        r.theta = "mu=values([1.0, 2.0]);sigma=identity".into();
        write_many(&[r.clone(), r.clone(), r], &p, Format::Csv).unwrap();
        let mut rd = csv::Reader::from_path(&p).unwrap();
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, RiskReport::header());
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        let col = |name: &str| header.iter().position(|h| h == name).unwrap();
        assert_eq!(
            &rows[0][col("theta")],
            "mu=values([1.0, 2.0]);sigma=identity"
        );
        assert_eq!(&rows[0][col("orlicz")], "power(2)=0.61:0.02;psi2=inf(1.5):");
        assert_eq!(&rows[0][col("ks_statistic")], "");
        assert_eq!(&rows[0][col("seed")], "42");
        assert_eq!(rows[0][col("bias")].parse::<f64>().unwrap(), -0.041);
    }

    #[test]
    fn io_error_names_path() {
        let p = Path::new("/nonexistent-dir/x/r.csv");
        let err = write_csv::<RiskReport>(&[], p).unwrap_err();
        assert_eq!(err.category(), "io");
        assert!(err.to_string().contains("/nonexistent-dir/x/r.csv"));
    }
}
