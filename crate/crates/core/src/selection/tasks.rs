use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    /// All other classes pooled as anomalies.
    OneVsRest,
    /// Each other class evaluated separately; the worst AUROC is reported.
    OneVsClosest,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::OneVsRest => "one-vs-rest",
            TaskMode::OneVsClosest => "one-vs-closest",
        })
    }
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-vs-rest" => Ok(TaskMode::OneVsRest),
            "one-vs-closest" => Ok(TaskMode::OneVsClosest),
            other => Err(Error::invalid(format!(
                "unknown task mode {other:?}; expected one-vs-rest or one-vs-closest"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub inlier_class: String,
    pub mode: TaskMode,
    pub out_classes: Vec<String>,
}

/// One task per class, in sorted class order.
pub fn build_tasks<S: AsRef<str>>(classes: &[S], mode: TaskMode) -> Result<Vec<TaskSpec>> {
    let distinct: BTreeSet<&str> = classes.iter().map(|c| c.as_ref()).collect();
    if distinct.len() < 2 {
        return Err(Error::invalid(format!(
            "tasks need at least 2 classes, found {}",
            distinct.len()
        )));
    }
    Ok(distinct
        .iter()
        .map(|&inlier| TaskSpec {
            task_id: format!("{inlier}/{mode}"),
            inlier_class: inlier.to_string(),
            mode,
            out_classes: distinct
                .iter()
                .filter(|&&c| c != inlier)
                .map(|c| c.to_string())
                .collect(),
        })
        .collect())
}

/// Reported AUROC of a task from its per-out-class AUROCs.
pub fn worst_case_auroc(per_out_class: &[f64]) -> Result<f64> {
    per_out_class
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::invalid("no out-class AUROCs to reduce"))
}
