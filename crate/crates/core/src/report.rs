//! Report rows and their JSON, CSV and markdown renderings, plus loss-trace
//! export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::{Conversion, LossKind};
use crate::spaces::SphereConvention;

/// One training run (one signature, rate and seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub signature: String,
    pub sphere_convention: SphereConvention,
    pub loss: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion: Option<Conversion>,
    pub lr: f64,
    pub seed: u64,
    pub iterations: usize,
    pub distortion: Option<f64>,
    pub map: Option<f64>,
    pub seconds: f64,
    /// Best rate for this signature and seed.
    pub best: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    /// The metric the loss optimises: distortion for distortion training,
    /// mAP for proxy training.
    pub fn primary(&self) -> Option<f64> {
        match self.loss {
            LossKind::Distortion => self.distortion,
            LossKind::Proxy => self.map,
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub spread: f64,
    pub runs: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            spread,
            runs: values.len(),
        })
    }
}

/// Best-rate results of one signature under one loss, over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub signature: String,
    pub loss: LossKind,
    pub distortion: Option<Spread>,
    pub map: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: RunConfig,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub signature: String,
    pub value: f64,
}

/// Best metric space against the best dot-product model under one loss,
/// scored by that loss's metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub loss: LossKind,
    pub best_metric: Option<ComparisonEntry>,
    pub best_dot: Option<ComparisonEntry>,
}

impl Report {
    pub fn new(command: &str, config: RunConfig, rows: Vec<ReportRow>) -> Self {
        let summary = summarize(&rows);
        Self {
            command: command.into(),
            config,
            rows,
            summary,
            comparison: Vec::new(),
        }
    }

    /// JSON with object keys in sorted order.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serialises");
        serde_json::to_string_pretty(&value).expect("value serialises")
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    /// Per-signature table of best-rate means, in first-appearance order,
    /// with the best value in each column in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| signature | loss | distortion | mAP |");
        let _ = writeln!(out, "|---|---|---|---|");
        let best_dist = self
            .summary
            .iter()
            .filter_map(|s| s.distortion.map(|d| d.mean))
            .fold(f64::INFINITY, f64::min);
        let best_map = self
            .summary
            .iter()
            .filter_map(|s| s.map.map(|m| m.mean))
            .fold(f64::NEG_INFINITY, f64::max);
        for s in &self.summary {
            let cell = |v: Option<Spread>, best: f64| match v {
                None => "failed".to_string(),
                Some(sp) => {
                    let text = if sp.runs > 1 {
                        format!("{:.4} ± {:.4}", sp.mean, sp.spread)
                    } else {
                        format!("{:.4}", sp.mean)
                    };
                    if sp.mean == best {
                        format!("**{text}**")
                    } else {
                        text
                    }
                }
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.signature,
                s.loss,
                cell(s.distortion, best_dist),
                cell(s.map, best_map)
            );
        }
        if !self.comparison.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "| metric | best metric space | dot product |");
            let _ = writeln!(out, "|---|---|---|");
            let entry = |e: &Option<ComparisonEntry>| match e {
                Some(e) => format!("{:.4} ({})", e.value, e.signature),
                None => "failed".to_string(),
            };
            for c in &self.comparison {
                let metric = match c.loss {
                    LossKind::Distortion => "distortion",
                    LossKind::Proxy => "mAP",
                };
                let _ = writeln!(
                    out,
                    "| {metric} | {} | {} |",
                    entry(&c.best_metric),
                    entry(&c.best_dot)
                );
            }
        }
        out
    }

    /// Writes `report.json`, `report.csv` and `report.md` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.to_json())?;
        write("report.csv", self.to_csv()?)?;
        write("report.md", self.to_markdown())
    }
}

/// Groups best-rate rows by (signature, loss) in first-appearance order.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, LossKind)> = Vec::new();
    for r in rows {
        let key = (r.signature.clone(), r.loss);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(signature, loss)| {
            let best: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.best && r.signature == signature && r.loss == loss)
                .collect();
            let collect = |f: fn(&ReportRow) -> Option<f64>| {
                Spread::of(&best.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            SummaryRow {
                distortion: collect(|r| r.distortion),
                map: collect(|r| r.map),
                signature,
                loss,
            }
        })
        .collect()
}

/// `dataset,signature,loss,lr,seed,distortion,map,seconds`; failed runs
/// leave the metric cells empty.
pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "signature",
        "loss",
        "lr",
        "seed",
        "distortion",
        "map",
        "seconds",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.signature.clone(),
            r.loss.to_string(),
            r.lr.to_string(),
            r.seed.to_string(),
            opt(r.distortion),
            opt(r.map),
            format!("{:.3}", r.seconds),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `iteration,loss,metric`, one row per iteration; the metric is filled in
/// on the last row only.
pub fn trace_to_csv(trace: &[f64], final_metric: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "loss", "metric"])?;
    for (i, loss) in trace.iter().enumerate() {
        let metric = if i + 1 == trace.len() {
            final_metric.to_string()
        } else {
            String::new()
        };
        w.write_record([i.to_string(), loss.to_string(), metric])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
