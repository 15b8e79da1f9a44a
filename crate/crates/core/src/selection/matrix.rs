use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::tasks::{worst_case_auroc, TaskSpec};
use crate::knn::{build_feature_bank, score_set};
use crate::metrics::auroc;
use crate::model::{
    check_unique_candidates, CandidateDescriptor, EmbeddingBank, ScoredSet, SyntheticValidationSet,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub synthetic_auroc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_auroc: Option<f64>,
}

/// Tasks by candidates grid of AUROCs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationMatrix {
    tasks: Vec<String>,
    candidates: Vec<CandidateDescriptor>,
    cells: Vec<Vec<Cell>>,
}

fn check_unit(value: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} AUROC {value} is outside [0, 1]"
        )))
    }
}

impl EvaluationMatrix {
    /// `cells[task][candidate]`. The real column must be present for every cell
    /// or for none.
    pub fn new(
        tasks: Vec<String>,
        candidates: Vec<CandidateDescriptor>,
        cells: Vec<Vec<Cell>>,
    ) -> Result<Self> {
        if tasks.is_empty() || candidates.is_empty() {
            return Err(Error::invalid(
                "evaluation matrix needs tasks and candidates",
            ));
        }
        check_unique_candidates(&candidates)?;
        if cells.len() != tasks.len() || cells.iter().any(|r| r.len() != candidates.len()) {
            return Err(Error::invalid(
                "evaluation matrix shape does not match tasks x candidates",
            ));
        }
        let with_real = cells[0][0].real_auroc.is_some();
        for cell in cells.iter().flatten() {
            check_unit(cell.synthetic_auroc, "synthetic")?;
            if cell.real_auroc.is_some() != with_real {
                return Err(Error::invalid("real AUROC missing for some cells"));
            }
            if let Some(r) = cell.real_auroc {
                check_unit(r, "real")?;
            }
        }
        Ok(Self {
            tasks,
            candidates,
            cells,
        })
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn candidates(&self) -> &[CandidateDescriptor] {
        &self.candidates
    }

    pub fn cell(&self, task: usize, candidate: usize) -> Cell {
        self.cells[task][candidate]
    }

    pub fn row(&self, task: usize) -> &[Cell] {
        &self.cells[task]
    }

    pub fn has_real(&self) -> bool {
        self.cells[0][0].real_auroc.is_some()
    }

    /// Task-averaged synthetic AUROC per candidate, in candidate order.
    pub fn mean_synthetic(&self) -> Vec<f64> {
        self.column_means(|c| Some(c.synthetic_auroc))
            .into_iter()
            .flatten()
            .collect()
    }

    /// Task-averaged real AUROC per candidate, when ground truth is present.
    pub fn mean_real(&self) -> Option<Vec<f64>> {
        self.column_means(|c| c.real_auroc).into_iter().collect()
    }

    fn column_means(&self, get: impl Fn(&Cell) -> Option<f64>) -> Vec<Option<f64>> {
        (0..self.candidates.len())
            .map(|c| {
                let mut sum = 0.0;
                for row in &self.cells {
                    sum += get(&row[c])?;
                }
                Some(sum / self.tasks.len() as f64)
            })
            .collect()
    }
}

/// Everything needed to evaluate one task.
#[derive(Debug, Clone)]
pub struct TaskInputs {
    pub task: TaskSpec,
    /// Ids whose embeddings form the kNN bank for synthetic evaluation.
    pub synthetic_bank_ids: Vec<String>,
    pub synthetic: SyntheticValidationSet,
    /// Ids whose embeddings form the kNN bank for ground-truth evaluation.
    pub real_bank_ids: Vec<String>,
    /// Ground-truth sets: one pooled set, or one per out-class. The reported real
    /// AUROC is the minimum over them.
    pub real: Vec<SyntheticValidationSet>,
}

/// A candidate extractor with embeddings for every id any task refers to.
#[derive(Debug, Clone)]
pub struct CandidateEmbeddings {
    pub descriptor: CandidateDescriptor,
    pub bank: EmbeddingBank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorOptions {
    pub k: usize,
    pub normalize: bool,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        Self {
            k: crate::knn::DEFAULT_K,
            normalize: false,
        }
    }
}

/// kNN scores of one candidate on a labeled set.
pub fn score_validation(
    embeddings: &EmbeddingBank,
    bank_ids: &[String],
    set: &SyntheticValidationSet,
    opts: &DetectorOptions,
) -> Result<ScoredSet> {
    let missing = |id: &str| {
        Error::invalid(format!(
            "candidate {:?} has no embedding for sample {id:?}",
            embeddings.name()
        ))
    };
    for id in bank_ids
        .iter()
        .chain(set.normal_ids())
        .chain(set.anomaly_ids())
    {
        if embeddings.index_of(id).is_none() {
            return Err(missing(id));
        }
    }
    let bank = build_feature_bank(embeddings.select("bank", bank_ids)?, opts.k)?
        .normalized(opts.normalize);
    let queries = embeddings.select("queries", &set.ids())?;
    score_set(&bank, &queries, &set.labels())
}

fn evaluate_cell(
    inputs: &TaskInputs,
    candidate: &CandidateEmbeddings,
    opts: &DetectorOptions,
) -> Result<Cell> {
    let synthetic = score_validation(
        &candidate.bank,
        &inputs.synthetic_bank_ids,
        &inputs.synthetic,
        opts,
    )?;
    let real_auroc = if inputs.real.is_empty() {
        None
    } else {
        let per_set = inputs
            .real
            .iter()
            .map(|set| {
                auroc(&score_validation(
                    &candidate.bank,
                    &inputs.real_bank_ids,
                    set,
                    opts,
                )?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Some(worst_case_auroc(&per_set)?)
    };
    Ok(Cell {
        synthetic_auroc: auroc(&synthetic)?,
        real_auroc,
    })
}

/// Fills the matrix with kNN AUROCs. Tasks are evaluated in parallel.
pub fn evaluate_candidates(
    tasks: &[TaskInputs],
    candidates: &[CandidateEmbeddings],
    opts: &DetectorOptions,
) -> Result<EvaluationMatrix> {
    let cells = tasks
        .par_iter()
        .map(|t| {
            candidates
                .iter()
                .map(|c| evaluate_cell(t, c, opts))
                .collect::<Result<Vec<Cell>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationMatrix::new(
        tasks.iter().map(|t| t.task.task_id.clone()).collect(),
        candidates.iter().map(|c| c.descriptor.clone()).collect(),
        cells,
    )
}

/// Candidate id to task-averaged AUROC, for reports.
pub fn averages(matrix: &EvaluationMatrix) -> BTreeMap<String, (f64, Option<f64>)> {
    let real = matrix.mean_real();
    matrix
        .candidates()
        .iter()
        .zip(matrix.mean_synthetic())
        .enumerate()
        .map(|(i, (c, s))| (c.id.clone(), (s, real.as_ref().map(|r| r[i]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::tasks::TaskMode;

    fn bank(name: &str, rows: &[(&str, f32)]) -> EmbeddingBank {
        EmbeddingBank::from_rows(
            name,
            1,
            rows.iter().map(|r| r.0.to_string()).collect(),
            &rows.iter().map(|r| vec![r.1]).collect::<Vec<_>>(),
            None,
        )
        .unwrap()
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn task(name: &str) -> TaskInputs {
        TaskInputs {
            task: TaskSpec {
                task_id: name.into(),
                inlier_class: name.into(),
                mode: TaskMode::OneVsRest,
                out_classes: vec!["other".into()],
            },
            synthetic_bank_ids: strings(&["s1", "s2"]),
            synthetic: SyntheticValidationSet::new(strings(&["n1"]), strings(&["x1"])).unwrap(),
            real_bank_ids: strings(&["s1", "s2"]),
            real: vec![
                SyntheticValidationSet::new(strings(&["n1"]), strings(&["r1"])).unwrap(),
                SyntheticValidationSet::new(strings(&["n1"]), strings(&["r2"])).unwrap(),
            ],
        }
    }

    #[test]
    fn shape_and_worst_case_real() {
        let rows = [
            ("s1", 0.0),
            ("s2", 0.1),
            ("n1", 0.05),
            ("x1", 5.0),
            ("r1", 3.0),
            ("r2", 0.0),
        ];
        let good = CandidateEmbeddings {
            descriptor: CandidateDescriptor::extractor("good", None),
            bank: bank("good", &rows),
        };
        let opts = DetectorOptions {
            k: 1,
            normalize: false,
        };
        let m = evaluate_candidates(
            &[task("a"), task("b"), task("c")],
            &[good.clone(), good.clone()],
            &opts,
        );
        assert!(matches!(m, Err(Error::DuplicateId(_))));
        let mut other = good.clone();
        other.descriptor.id = "other".into();
        let m =
            evaluate_candidates(&[task("a"), task("b"), task("c")], &[good, other], &opts).unwrap();
        assert_eq!(m.tasks().len(), 3);
        assert_eq!(m.candidates().len(), 2);
        let cell = m.cell(0, 0);
        assert_eq!(cell.synthetic_auroc, 1.0);
        // r1 is separated, r2 scores below the normal.
        assert_eq!(cell.real_auroc, Some(0.0));
        assert_eq!(m.mean_synthetic(), vec![1.0, 1.0]);
    }

    #[test]
    fn missing_embedding_is_reported() {
        let c = CandidateEmbeddings {
            descriptor: CandidateDescriptor::extractor("c", None),
            bank: bank("c", &[("s1", 0.0), ("s2", 1.0), ("n1", 0.0)]),
        };
        let err = evaluate_candidates(&[task("a")], &[c], &DetectorOptions::default()).unwrap_err();
        assert!(err.to_string().contains("x1"));
    }

    #[test]
    fn matrix_validation() {
        let c = vec![CandidateDescriptor::extractor("a", None)];
        let cell = Cell {
            synthetic_auroc: 0.5,
            real_auroc: None,
        };
        assert!(EvaluationMatrix::new(vec!["t".into()], c.clone(), vec![vec![cell]]).is_ok());
        let bad = Cell {
            synthetic_auroc: 1.5,
            real_auroc: None,
        };
        assert!(EvaluationMatrix::new(vec!["t".into()], c.clone(), vec![vec![bad]]).is_err());
        assert!(EvaluationMatrix::new(vec!["t".into()], c, vec![]).is_err());
    }
}
