use serde::Serialize;

use super::matrix::{Cell, EvaluationMatrix};
use super::strategy::{select, SelectionReport, Strategy, TaskChoice};
use super::tasks::worst_case_auroc;
use crate::metrics::auroc;
use crate::model::{CandidateDescriptor, EmbeddingBank, ScoredSet, SyntheticValidationSet};
use crate::{Error, Result};

const FLOWERS: &str = include_str!("../../data/prompts/flowers.txt");
const CUB: &str = include_str!("../../data/prompts/cub.txt");
const DEFECT: &str = include_str!("../../data/prompts/defect.txt");

pub const BUILTIN_CATALOGS: [&str; 3] = ["flowers", "cub", "defect"];

/// Ordered (normal, anomaly) template pairs; the first pair is the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptCatalog {
    pub dataset: String,
    pub pairs: Vec<(String, String)>,
}

impl PromptCatalog {
    /// One pair per line, normal and anomaly template separated by a tab.
    pub fn parse(dataset: impl Into<String>, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (normal, anomaly) = line.split_once('\t').ok_or_else(|| Error::Row {
                row: i + 1,
                message: "expected a tab between normal and anomaly templates".into(),
            })?;
            pairs.push((normal.to_string(), anomaly.to_string()));
        }
        if pairs.is_empty() {
            return Err(Error::invalid("prompt catalog is empty"));
        }
        Ok(Self {
            dataset: dataset.into(),
            pairs,
        })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "flowers" => FLOWERS,
            "cub" => CUB,
            "defect" => DEFECT,
            other => {
                return Err(Error::invalid(format!(
                    "unknown prompt catalog {other:?}; expected one of {BUILTIN_CATALOGS:?}"
                )))
            }
        };
        Self::parse(name, text)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Both templates of pair `i` with `{}` replaced by `class_name`.
    pub fn instantiate(&self, i: usize, class_name: &str) -> (String, String) {
        let (n, a) = &self.pairs[i];
        (n.replace("{}", class_name), a.replace("{}", class_name))
    }

    /// Candidate descriptors `template-00`, `template-01`, ... in catalog order.
    pub fn candidates(&self) -> Vec<CandidateDescriptor> {
        (0..self.len())
            .map(|i| CandidateDescriptor::prompt(format!("template-{i:02}")))
            .collect()
    }
}

/// Per-image similarities for one task: row per image, column per template.
#[derive(Debug, Clone)]
pub struct PromptTask {
    pub task_id: String,
    pub normal_sims: EmbeddingBank,
    pub anomaly_sims: EmbeddingBank,
    pub synthetic: SyntheticValidationSet,
    pub real: Vec<SyntheticValidationSet>,
}

impl PromptTask {
    fn check(&self, templates: usize) -> Result<()> {
        for bank in [&self.normal_sims, &self.anomaly_sims] {
            if bank.dim() != templates {
                return Err(Error::invalid(format!(
                    "task {}: similarity bank {:?} has {} columns for {templates} templates",
                    self.task_id,
                    bank.name(),
                    bank.dim()
                )));
            }
        }
        Ok(())
    }

    fn side_values(&self, id: &str) -> Result<(&[f32], &[f32])> {
        let missing =
            || Error::invalid(format!("task {}: no similarities for {id:?}", self.task_id));
        Ok((
            self.normal_sims.get(id).ok_or_else(missing)?,
            self.anomaly_sims.get(id).ok_or_else(missing)?,
        ))
    }

    fn scores(
        &self,
        set: &SyntheticValidationSet,
        score: impl Fn(&[f32], &[f32]) -> f64,
    ) -> Result<ScoredSet> {
        let ids = set.ids();
        let values = ids
            .iter()
            .map(|id| self.side_values(id).map(|(n, a)| score(n, a)))
            .collect::<Result<Vec<f64>>>()?;
        ScoredSet::new(ids, values, set.labels())
    }

    /// Anomaly-side minus normal-side similarity of one template.
    pub fn template_scores(
        &self,
        template: usize,
        set: &SyntheticValidationSet,
    ) -> Result<ScoredSet> {
        self.scores(set, |n, a| f64::from(a[template]) - f64::from(n[template]))
    }

    /// Each side's similarities averaged over all templates, then differenced.
    pub fn ensemble_scores(&self, set: &SyntheticValidationSet) -> Result<ScoredSet> {
        let mean = |v: &[f32]| v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64;
        self.scores(set, |n, a| mean(a) - mean(n))
    }

    fn real_auroc(
        &self,
        score: impl Fn(&SyntheticValidationSet) -> Result<ScoredSet>,
    ) -> Result<Option<f64>> {
        if self.real.is_empty() {
            return Ok(None);
        }
        let per_set = self
            .real
            .iter()
            .map(|s| auroc(&score(s)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Some(worst_case_auroc(&per_set)?))
    }
}

/// Tasks by templates matrix of AUROCs.
pub fn prompt_matrix(catalog: &PromptCatalog, tasks: &[PromptTask]) -> Result<EvaluationMatrix> {
    let cells = tasks
        .iter()
        .map(|task| {
            task.check(catalog.len())?;
            (0..catalog.len())
                .map(|t| {
                    Ok(Cell {
                        synthetic_auroc: auroc(&task.template_scores(t, &task.synthetic)?)?,
                        real_auroc: task.real_auroc(|s| task.template_scores(t, s))?,
                    })
                })
                .collect::<Result<Vec<Cell>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationMatrix::new(
        tasks.iter().map(|t| t.task_id.clone()).collect(),
        catalog.candidates(),
        cells,
    )
}

/// Picks a template per task, or reports the ensemble for `PromptEnsemble`.
pub fn select_prompt(
    catalog: &PromptCatalog,
    tasks: &[PromptTask],
    strategy: &Strategy,
) -> Result<SelectionReport> {
    if *strategy != Strategy::PromptEnsemble {
        return select(&prompt_matrix(catalog, tasks)?, strategy);
    }
    let choices = tasks
        .iter()
        .map(|task| {
            task.check(catalog.len())?;
            Ok(TaskChoice {
                task_id: task.task_id.clone(),
                chosen: None,
                synthetic_auroc: Some(auroc(&task.ensemble_scores(&task.synthetic)?)?),
                real_auroc: task.real_auroc(|s| task.ensemble_scores(s))?,
                best_real_auroc: None,
                matched: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if choices.is_empty() {
        return Err(Error::invalid("prompt selection needs at least one task"));
    }
    Ok(SelectionReport::from_choices(strategy.name(), choices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalogs_have_ten_pairs() {
        for name in BUILTIN_CATALOGS {
            let c = PromptCatalog::builtin(name).unwrap();
            assert_eq!(c.len(), 10, "{name}");
        }
        let flowers = PromptCatalog::builtin("flowers").unwrap();
        assert_eq!(
            flowers.instantiate(0, "daisy"),
            (
                "a photo of a daisy flower".into(),
                "a photo of some flower".into()
            )
        );
        let defect = PromptCatalog::builtin("defect").unwrap();
        assert_eq!(
            defect.instantiate(7, "screw").1,
            "a blurry photo of screw with defect"
        );
        assert!(PromptCatalog::builtin("imagenet").is_err());
        assert!(PromptCatalog::parse("x", "no tab here\n").is_err());
    }

    fn sims(name: &str, rows: &[(&str, [f32; 2])]) -> EmbeddingBank {
        EmbeddingBank::from_rows(
            name,
            2,
            rows.iter().map(|r| r.0.to_string()).collect(),
            &rows.iter().map(|r| r.1.to_vec()).collect::<Vec<_>>(),
            None,
        )
        .unwrap()
    }

    fn two_template_task() -> (PromptCatalog, PromptTask) {
        let catalog = PromptCatalog::parse("t", "a {}\tsome\nb {}\tother\n").unwrap();
        // Template 0 misorders the samples, template 1 separates them.
        let normal = sims(
            "n",
            &[
                ("n1", [0.3, 0.5]),
                ("n2", [0.3, 0.5]),
                ("x1", [0.5, 0.1]),
                ("x2", [0.5, 0.2]),
            ],
        );
        let anomaly = sims(
            "a",
            &[
                ("n1", [0.4, 0.1]),
                ("n2", [0.4, 0.2]),
                ("x1", [0.2, 0.6]),
                ("x2", [0.3, 0.7]),
            ],
        );
        let set = SyntheticValidationSet::new(
            vec!["n1".into(), "n2".into()],
            vec!["x1".into(), "x2".into()],
        )
        .unwrap();
        let task = PromptTask {
            task_id: "t".into(),
            normal_sims: normal,
            anomaly_sims: anomaly,
            synthetic: set.clone(),
            real: vec![set],
        };
        (catalog, task)
    }

    #[test]
    fn better_template_selected() {
        let (catalog, task) = two_template_task();
        let r = select_prompt(&catalog, std::slice::from_ref(&task), &Strategy::Swsa).unwrap();
        assert_eq!(r.choices[0].chosen.as_deref(), Some("template-01"));
        let d = select_prompt(
            &catalog,
            std::slice::from_ref(&task),
            &Strategy::DefaultPrompt,
        )
        .unwrap();
        assert_eq!(d.choices[0].chosen.as_deref(), Some("template-00"));
        let e = select_prompt(&catalog, &[task], &Strategy::PromptEnsemble).unwrap();
        assert_eq!(e.pick_count, None);
        assert!(e.mean_real_auroc.is_some());
    }

    #[test]
    fn equal_sides_give_chance() {
        let (catalog, mut task) = two_template_task();
        task.anomaly_sims = task.normal_sims.clone();
        let s = task.template_scores(0, &task.synthetic).unwrap();
        assert!(s.scores().iter().all(|&v| v == 0.0));
        assert_eq!(auroc(&s).unwrap(), 0.5);
        let m = prompt_matrix(&catalog, &[task]).unwrap();
        assert_eq!(m.cell(0, 1).synthetic_auroc, 0.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (_, task) = two_template_task();
        let three = PromptCatalog::parse("t", "a\tb\nc\td\ne\tf\n").unwrap();
        assert!(prompt_matrix(&three, &[task]).is_err());
    }
}
