use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::EvaluationMatrix;
use crate::model::CandidateKind;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Strategy {
    /// Highest synthetic AUROC.
    Swsa,
    /// Highest `size_rank`.
    LargestModel,
    /// First prompt template in candidate order.
    DefaultPrompt,
    /// Averages similarities over all templates; handled by prompt selection.
    PromptEnsemble,
    /// Uniform pick per task from a seeded stream.
    Random { seed: u64 },
    /// Highest real AUROC; the upper bound.
    GroundTruth,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Swsa => "swsa",
            Strategy::LargestModel => "largest-model",
            Strategy::DefaultPrompt => "default-prompt",
            Strategy::PromptEnsemble => "prompt-ensemble",
            Strategy::Random { .. } => "random",
            Strategy::GroundTruth => "ground-truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskChoice {
    pub task_id: String,
    pub chosen: Option<String>,
    pub synthetic_auroc: Option<f64>,
    pub real_auroc: Option<f64>,
    pub best_real_auroc: Option<f64>,
    pub matched: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub strategy: String,
    pub choices: Vec<TaskChoice>,
    pub task_count: usize,
    pub pick_count: Option<usize>,
    pub pick_rate: Option<f64>,
    /// Mean real AUROC of the chosen candidates.
    pub mean_real_auroc: Option<f64>,
}

impl SelectionReport {
    pub(crate) fn from_choices(strategy: &str, choices: Vec<TaskChoice>) -> Self {
        let task_count = choices.len();
        let matched: Option<Vec<bool>> = choices.iter().map(|c| c.matched).collect();
        let pick_count = matched.map(|m| m.iter().filter(|&&b| b).count());
        let reals: Option<Vec<f64>> = choices.iter().map(|c| c.real_auroc).collect();
        Self {
            strategy: strategy.to_string(),
            task_count,
            pick_count,
            pick_rate: pick_count.map(|p| p as f64 / task_count as f64),
            mean_real_auroc: reals.map(|r| r.iter().sum::<f64>() / task_count as f64),
            choices,
        }
    }
}

/// Index of the maximum value; ties go to the lexicographically lowest id.
pub fn argmax_by_id(values: &[f64], ids: &[&str]) -> Option<usize> {
    (0..values.len()).reduce(|best, i| {
        match values[i]
            .partial_cmp(&values[best])
            .unwrap_or(Ordering::Equal)
        {
            Ordering::Greater => i,
            Ordering::Equal if ids[i] < ids[best] => i,
            _ => best,
        }
    })
}

fn pick(matrix: &EvaluationMatrix, task: usize, strategy: &Strategy) -> Result<usize> {
    let candidates = matrix.candidates();
    let ids: Vec<&str> = candidates.iter().map(|c| c.id.as_str()).collect();
    let row = matrix.row(task);
    match strategy {
        Strategy::Swsa => {
            let synth: Vec<f64> = row.iter().map(|c| c.synthetic_auroc).collect();
            Ok(argmax_by_id(&synth, &ids).expect("matrix is nonempty"))
        }
        Strategy::GroundTruth => {
            let real = row
                .iter()
                .map(|c| c.real_auroc)
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::invalid("ground-truth strategy needs real AUROCs"))?;
            Ok(argmax_by_id(&real, &ids).expect("matrix is nonempty"))
        }
        Strategy::LargestModel => {
            let ranks = candidates
                .iter()
                .map(|c| {
                    c.size_rank.map(f64::from).ok_or_else(|| {
                        Error::invalid(format!("candidate {:?} has no size_rank", c.id))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(argmax_by_id(&ranks, &ids).expect("matrix is nonempty"))
        }
        Strategy::DefaultPrompt => candidates
            .iter()
            .position(|c| c.kind == CandidateKind::PromptTemplate)
            .ok_or_else(|| Error::invalid("default-prompt strategy needs prompt candidates")),
        Strategy::Random { seed } => {
            let mut rng = stream(*seed, &format!("random-pick/{}", matrix.tasks()[task]));
            Ok(rng.random_range(0..candidates.len()))
        }
        Strategy::PromptEnsemble => Err(Error::invalid(
            "prompt-ensemble does not pick a candidate; use prompt selection",
        )),
    }
}

/// Applies `strategy` to every task. A pick counts as matched when its real
/// AUROC equals the best real AUROC of the task.
pub fn select(matrix: &EvaluationMatrix, strategy: &Strategy) -> Result<SelectionReport> {
    let choices = (0..matrix.tasks().len())
        .map(|t| {
            let c = pick(matrix, t, strategy)?;
            let cell = matrix.cell(t, c);
            let best = matrix
                .row(t)
                .iter()
                .filter_map(|c| c.real_auroc)
                .reduce(f64::max);
            Ok(TaskChoice {
                task_id: matrix.tasks()[t].clone(),
                chosen: Some(matrix.candidates()[c].id.clone()),
                synthetic_auroc: Some(cell.synthetic_auroc),
                real_auroc: cell.real_auroc,
                best_real_auroc: best,
                matched: cell.real_auroc.zip(best).map(|(r, b)| r == b),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionReport::from_choices(strategy.name(), choices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CandidateDescriptor;
    use crate::selection::matrix::Cell;

    fn matrix(cells: &[&[(f64, f64)]], ids: &[&str], ranks: &[Option<u32>]) -> EvaluationMatrix {
        EvaluationMatrix::new(
            (0..cells.len()).map(|t| format!("t{t}")).collect(),
            ids.iter()
                .zip(ranks)
                .map(|(id, &r)| CandidateDescriptor::extractor(*id, r))
                .collect(),
            cells
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&(s, r)| Cell {
                            synthetic_auroc: s,
                            real_auroc: Some(r),
                        })
                        .collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_candidate_always_matches() {
        let m = matrix(&[&[(0.4, 0.6)], &[(0.9, 0.2)]], &["only"], &[None]);
        let r = select(&m, &Strategy::Swsa).unwrap();
        assert_eq!(r.pick_rate, Some(1.0));
    }

    #[test]
    fn three_of_four() {
        let m = matrix(
            &[
                &[(0.9, 0.8), (0.7, 0.6)],
                &[(0.6, 0.9), (0.8, 0.7)],
                &[(0.5, 0.4), (0.6, 0.5)],
                &[(0.9, 0.9), (0.1, 0.3)],
            ],
            &["a", "b"],
            &[Some(1), Some(2)],
        );
        let r = select(&m, &Strategy::Swsa).unwrap();
        assert_eq!((r.pick_count, r.task_count), (Some(3), 4));
        assert_eq!(r.pick_rate, Some(0.75));
        let expected = (0.8 + 0.7 + 0.5 + 0.9) / 4.0;
        assert_eq!(r.mean_real_auroc, Some(expected));
        let gt = select(&m, &Strategy::GroundTruth).unwrap();
        assert_eq!(gt.pick_rate, Some(1.0));
        let largest = select(&m, &Strategy::LargestModel).unwrap();
        assert!(largest
            .choices
            .iter()
            .all(|c| c.chosen.as_deref() == Some("b")));
    }

    #[test]
    fn ties_pick_lowest_id() {
        let m = matrix(
            &[&[(0.7, 0.5), (0.7, 0.6)]],
            &["zeta", "alpha"],
            &[None, None],
        );
        let r = select(&m, &Strategy::Swsa).unwrap();
        assert_eq!(r.choices[0].chosen.as_deref(), Some("alpha"));
        assert!(select(&m, &Strategy::LargestModel).is_err());
        assert!(select(&m, &Strategy::DefaultPrompt).is_err());
        assert!(select(&m, &Strategy::PromptEnsemble).is_err());
    }

    #[test]
    fn random_is_reproducible() {
        let row: &[(f64, f64)] = &[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3)];
        let m = matrix(&[row; 5], &["a", "b", "c"], &[None; 3]);
        let s = Strategy::Random { seed: 11 };
        assert_eq!(select(&m, &s).unwrap(), select(&m, &s).unwrap());
    }
}
