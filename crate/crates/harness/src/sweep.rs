//! Truncation sweeps: replace conv kernels by truncated versions over a range
//! of kept singular values (or CP ranks), evaluate each truncated model, and
//! optionally retrain afterwards to watch accuracy rebound.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use kerneltn_core::decomp::CpOptions;
use kerneltn_core::trunc::{truncate_bipartition, truncate_cp, Cut, TruncError, TruncationReport};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::eval::{evaluate, EvalResult};
use crate::model::{ModelError, ModelSpec};
use crate::train::{train_toy, TrainError, TrainOptions};

pub const CSV_HEADER: &str =
    "target,cut,keep,norm_before,norm_after,norm_loss_pct,entropy_before,entropy_after,corr_loss_pct,compression_ratio,top1,top5";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid range '{0}' (expected start:end:step with 1 <= start <= end and step >= 1)")]
    BadRange(String),
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error("layer '{layer}': {source}")]
    Truncation { layer: String, source: TruncError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SweepError>;

/// Inclusive arithmetic range `start:end:step`; `start:end` means step 1.
/// `end` is included only when the progression lands on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeepRange {
    pub start: usize,
    pub end: usize,
    pub step: usize,
}

impl KeepRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.end).step_by(self.step).collect()
    }
}

impl FromStr for KeepRange {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SweepError::BadRange(s.to_string());
        let parts: Vec<usize> = s.split(':').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (start, end, step) = match parts.as_slice() {
            &[a, b] => (a, b, 1),
            &[a, b, c] => (a, b, c),
            _ => return Err(bad()),
        };
        if start < 1 || start > end || step < 1 {
            return Err(bad());
        }
        Ok(KeepRange { start, end, step })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub layer: String,
    pub cut: Cut,
    pub keep: KeepRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub targets: Vec<Target>,
    /// Apply position `i` of every target's range together instead of one target at a time.
    pub simultaneous: bool,
    /// Seed for CP-ALS initialisation and retraining.
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    layer: String,
    cut: String,
    keep: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    simultaneous: bool,
    targets: Vec<RawTarget>,
}

impl FromStr for SweepConfig {
    type Err = SweepError;

    /// Parses the TOML form:
    ///
    /// ```toml
    /// seed = 0
    /// simultaneous = false
    /// [[targets]]
    /// layer = "conv1"
    /// cut = "OUT"        # any bipartition, or "CP"
    /// keep = "1:8:1"
    /// ```
    fn from_str(s: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(s).map_err(|e| SweepError::Config(e.to_string()))?;
        if raw.targets.is_empty() {
            return Err(SweepError::Config("no targets".into()));
        }
        let targets = raw
            .targets
            .into_iter()
            .map(|t| {
                let cut = t.cut.parse().map_err(|e: TruncError| SweepError::Config(e.to_string()))?;
                Ok(Target { layer: t.layer, cut, keep: t.keep.parse()? })
            })
            .collect::<Result<_>>()?;
        Ok(SweepConfig { targets, simultaneous: raw.simultaneous, seed: raw.seed })
    }
}

/// Metric columns of a sweep row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub norm_before: f64,
    pub norm_after: f64,
    pub norm_loss_pct: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub corr_loss_pct: f64,
    pub compression_ratio: f64,
}

impl Metrics {
    fn from_report(r: &TruncationReport) -> Self {
        Metrics {
            norm_before: r.norm_before,
            norm_after: r.norm_after,
            norm_loss_pct: r.norm_loss_pct,
            entropy_before: r.entropy_before,
            entropy_after: r.entropy_after,
            corr_loss_pct: r.corr_loss_pct,
            compression_ratio: r.compression_ratio,
        }
    }

    /// Per-layer metrics averaged; the compression ratio is total dense over
    /// total factored parameters.
    fn combine(reports: &[TruncationReport], dense_sizes: &[usize]) -> Self {
        let n = reports.len() as f64;
        let mean = |f: fn(&TruncationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let dense: f64 = dense_sizes.iter().map(|&d| d as f64).sum();
        let factored: f64 = reports.iter().zip(dense_sizes).map(|(r, &d)| d as f64 / r.compression_ratio).sum();
        Metrics {
            norm_before: mean(|r| r.norm_before),
            norm_after: mean(|r| r.norm_after),
            norm_loss_pct: mean(|r| r.norm_loss_pct),
            entropy_before: mean(|r| r.entropy_before),
            entropy_after: mean(|r| r.entropy_after),
            corr_loss_pct: mean(|r| r.corr_loss_pct),
            compression_ratio: dense / factored,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub target: String,
    pub cut: String,
    pub keep: String,
    /// `None` for the untruncated baseline row.
    pub metrics: Option<Metrics>,
    /// Per-layer reports behind `metrics`.
    pub reports: Vec<TruncationReport>,
    pub eval: EvalResult,
}

/// Truncates one conv layer of `m` in place.
pub fn truncate_layer(m: &mut ModelSpec, layer: &str, cut: &Cut, keep: usize, seed: u64) -> Result<TruncationReport> {
    let k = m.kernel(layer)?;
    let wrap = |source| SweepError::Truncation { layer: layer.to_string(), source };
    let (truncated, report) = match cut {
        Cut::Bipartition(b) => truncate_bipartition(&k, b, keep).map_err(wrap)?,
        Cut::Cp => truncate_cp(&k, keep, &CpOptions { seed, ..CpOptions::default() }).map_err(wrap)?,
    };
    m.set_kernel(layer, truncated)?;
    Ok(report)
}

/// One sweep point: which `(target index, keep)` pairs are applied together.
fn sweep_points(cfg: &SweepConfig) -> Vec<Vec<(usize, usize)>> {
    if cfg.simultaneous {
        let ranges: Vec<Vec<usize>> = cfg.targets.iter().map(|t| t.keep.values()).collect();
        let len = ranges.iter().map(Vec::len).min().unwrap_or(0);
        (0..len).map(|i| ranges.iter().enumerate().map(|(t, r)| (t, r[i])).collect()).collect()
    } else {
        cfg.targets
            .iter()
            .enumerate()
            .flat_map(|(t, target)| target.keep.values().into_iter().map(move |k| vec![(t, k)]))
            .collect()
    }
}

fn run_point(m: &ModelSpec, cfg: &SweepConfig, data: &Dataset, point: &[(usize, usize)]) -> Result<SweepRecord> {
    let mut model = m.clone();
    let mut reports = Vec::with_capacity(point.len());
    let mut dense_sizes = Vec::with_capacity(point.len());
    for &(t, keep) in point {
        let target = &cfg.targets[t];
        dense_sizes.push(model.kernel(&target.layer)?.dims().iter().product());
        reports.push(truncate_layer(&mut model, &target.layer, &target.cut, keep, cfg.seed)?);
    }
    let join = |f: &dyn Fn(usize, usize) -> String| point.iter().map(|&(t, k)| f(t, k)).collect::<Vec<_>>().join("+");
    let metrics = if reports.len() == 1 { Metrics::from_report(&reports[0]) } else { Metrics::combine(&reports, &dense_sizes) };
    Ok(SweepRecord {
        target: join(&|t, _| cfg.targets[t].layer.clone()),
        cut: join(&|t, _| cfg.targets[t].cut.to_string()),
        keep: join(&|_, k| k.to_string()),
        metrics: Some(metrics),
        reports,
        eval: evaluate(&model, data)?,
    })
}

/// Baseline row first, then one row per sweep point in (target, keep) order.
/// Points run concurrently; `m` is never modified.
pub fn run_sweep(m: &ModelSpec, cfg: &SweepConfig, data: &Dataset) -> Result<Vec<SweepRecord>> {
    for t in &cfg.targets {
        m.kernel(&t.layer)?;
    }
    let baseline = SweepRecord {
        target: "baseline".into(),
        cut: String::new(),
        keep: String::new(),
        metrics: None,
        reports: Vec::new(),
        eval: evaluate(m, data)?,
    };
    let points = sweep_points(cfg);
    let rows: Vec<SweepRecord> = points.par_iter().map(|p| run_point(m, cfg, data, p)).collect::<Result<_>>()?;
    Ok(std::iter::once(baseline).chain(rows).collect())
}

/// Quotes a text field when it contains a separator (e.g. the `OUT,IN` cut).
fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_row(r: &SweepRecord) -> String {
    let mut s = format!("{},{},{},", csv_field(&r.target), csv_field(&r.cut), csv_field(&r.keep));
    match &r.metrics {
        Some(m) => {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},",
                m.norm_before, m.norm_after, m.norm_loss_pct, m.entropy_before, m.entropy_after, m.corr_loss_pct, m.compression_ratio
            );
        }
        None => s.push_str(",,,,,,,"),
    }
    let _ = write!(s, "{},{}", r.eval.top1, r.eval.top5);
    s
}

pub fn write_csv(records: &[SweepRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReboundTrace {
    pub baseline: EvalResult,
    /// Entry 0 is the freshly truncated model; entry `e` follows epoch `e`.
    pub trace: Vec<EvalResult>,
    pub losses: Vec<f64>,
    pub reports: Vec<TruncationReport>,
}

impl ReboundTrace {
    /// Running maximum of top-1 accuracy along the trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::NEG_INFINITY, |best, e| {
                *best = best.max(e.top1);
                Some(*best)
            })
            .collect()
    }

    /// First trace index whose top-1 is within `tolerance` (absolute) of the baseline.
    pub fn rebound_epoch(&self, tolerance: f64) -> Option<usize> {
        self.trace.iter().position(|e| e.top1 >= self.baseline.top1 - tolerance)
    }
}

/// Applies the most aggressive point of every target range (its smallest
/// keep) at once, then retrains for `opts.epochs`, evaluating on `val` after
/// each epoch.
pub fn retrain_after_truncation(
    m: &ModelSpec,
    cfg: &SweepConfig,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
) -> Result<ReboundTrace> {
    let baseline = evaluate(m, val)?;
    let mut model = m.clone();
    let mut reports = Vec::new();
    for t in &cfg.targets {
        reports.push(truncate_layer(&mut model, &t.layer, &t.cut, t.keep.start, cfg.seed)?);
    }
    let mut trace = vec![evaluate(&model, val)?];
    let mut eval_err = None;
    let outcome = train_toy(&model, train, opts, |_, _, trained| match evaluate(trained, val) {
        Ok(e) => trace.push(e),
        Err(e) => eval_err = Some(e),
    })?;
    if let Some(e) = eval_err {
        return Err(e.into());
    }
    Ok(ReboundTrace { baseline, trace, losses: outcome.losses, reports })
}

pub fn write_rebound_csv(r: &ReboundTrace, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,top1,top5,best_top1")?;
    for (epoch, (e, best)) in r.trace.iter().zip(r.best_so_far()).enumerate() {
        writeln!(out, "{epoch},{},{},{best}", e.top1, e.top5)?;
    }
    Ok(())
}
