//! Task construction, candidate evaluation, selection strategies and reports.

mod auxiliary;
mod hardest;
mod matrix;
mod prompts;
mod strategy;
mod tasks;

pub use auxiliary::sample_auxiliary;
pub use hardest::{difficulty_scores, filter_hardest};
pub use matrix::{
    averages, evaluate_candidates, score_validation, CandidateEmbeddings, Cell, DetectorOptions,
    EvaluationMatrix, TaskInputs,
};
pub use prompts::{prompt_matrix, select_prompt, PromptCatalog, PromptTask, BUILTIN_CATALOGS};
pub use strategy::{argmax_by_id, select, SelectionReport, Strategy, TaskChoice};
pub use tasks::{build_tasks, worst_case_auroc, TaskMode, TaskSpec};
