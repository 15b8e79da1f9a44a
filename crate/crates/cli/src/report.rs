use std::collections::BTreeMap;

use serde::Serialize;
use swsa_core::metrics::{bonferroni_threshold, is_significant, kendall_tau, KendallMethod};
use swsa_core::model::CandidateDescriptor;
use swsa_core::selection::{Cell, SelectionReport, TaskMode};

use crate::error::{CliError, Result};

pub const TOOL: &str = "swsa";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub candidates: usize,
    pub tau: f64,
    pub p_value: f64,
    pub method: KendallMethod,
    pub threshold: f64,
    pub significant: bool,
}

/// Kendall correlation between two per-candidate AUROC vectors, or `None` when
/// it is undefined (fewer than two candidates or a constant ranking).
pub fn rank_entry(
    synthetic: &[f64],
    real: &[f64],
    alpha: f64,
    tests: usize,
) -> Result<Option<RankEntry>> {
    if synthetic.len() < 2 {
        return Ok(None);
    }
    let threshold = bonferroni_threshold(alpha, tests)
        .map_err(|e| CliError::config("selection.alpha", e.to_string()))?;
    match kendall_tau(synthetic, real) {
        Ok(k) => Ok(Some(RankEntry {
            candidates: synthetic.len(),
            tau: k.tau,
            p_value: k.p_value,
            method: k.method,
            threshold,
            significant: is_significant(k.p_value, threshold),
        })),
        Err(e) => {
            log::warn!("rank correlation skipped: {e}");
            Ok(None)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEntry {
    pub task_id: String,
    pub inlier_class: String,
    pub seed_count: usize,
    pub held_out_count: usize,
    pub synthetic_count: usize,
    pub aurocs: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageEntry {
    pub synthetic_auroc: f64,
    pub real_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardestEntry {
    pub n: usize,
    pub mean_synthetic_auroc: BTreeMap<String, f64>,
    pub rank: Option<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvEntry {
    pub candidate: String,
    pub per_task: BTreeMap<String, f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub mode: TaskMode,
    pub generator: String,
    pub candidates: Vec<CandidateDescriptor>,
    pub tasks: Vec<TaskEntry>,
    pub averages: BTreeMap<String, AverageEntry>,
    pub strategies: Vec<SelectionReport>,
    pub rank: Option<RankEntry>,
    pub hardest: Vec<HardestEntry>,
    pub tv: Option<TvEntry>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per strategy: `mode,strategy,pick_count,task_count,pick_rate,auroc`.
pub fn summary_csv(report: &RunReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        let mut put = |rec: &[String]| {
            w.write_record(rec)
                .map_err(|e| CliError::Invalid(format!("csv: {e}")))
        };
        put(&[
            "mode",
            "strategy",
            "pick_count",
            "task_count",
            "pick_rate",
            "auroc",
        ]
        .map(String::from))?;
        for s in &report.strategies {
            put(&[
                report.mode.to_string(),
                s.strategy.clone(),
                opt(s.pick_count),
                s.task_count.to_string(),
                opt(s.pick_rate),
                opt(s.mean_real_auroc),
            ])?;
        }
        w.flush()
            .map_err(|e| CliError::io(std::path::Path::new("report.csv"), e))?;
    }
    Ok(buf)
}
