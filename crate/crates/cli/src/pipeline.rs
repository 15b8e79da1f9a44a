//! The full run: partition, generate, mix, extract, score, evaluate, select, report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use swsa_core::model::{
    write_atomic, write_ebank_file, CandidateDescriptor, EmbeddingBank, ScoredSet,
    SyntheticValidationSet,
};
use swsa_core::selection::{
    difficulty_scores, filter_hardest, score_validation, select, DetectorOptions, EvaluationMatrix,
};
use swsa_core::tv::{total_variation, TvConfig};

use crate::config::{GeneratorKind, PipelineConfig};
use crate::dataset::Dataset;
use crate::error::{CliError, Result};
use crate::report::{
    rank_entry, summary_csv, AverageEntry, HardestEntry, RunReport, TaskEntry, TvEntry, TOOL,
    VERSION,
};
use crate::stages::{self, Partition};

struct PreparedTask {
    class: String,
    task: String,
    dir: PathBuf,
    partition: Partition,
    synthetic: SyntheticValidationSet,
    real: Vec<(String, SyntheticValidationSet)>,
}

struct ScoredTask {
    synthetic: Vec<ScoredSet>,
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn tasks_dir(out: &Path) -> PathBuf {
    out.join("tasks")
}

pub fn synthetic_dir(task_dir: &Path) -> PathBuf {
    task_dir.join("synthetic")
}

fn prepare(cfg: &PipelineConfig, ds: &Dataset, class: &str) -> Result<PreparedTask> {
    let mode = cfg.selection.mode;
    let task = stages::task_id(class, mode);
    let dir = tasks_dir(&cfg.paths.out).join(class);
    let partition =
        stages::partition_task(ds.support_of(class)?, &cfg.split, cfg.master_seed, &task)?;
    stages::write_partition(&dir.join("partition.csv"), &partition)?;

    let synth_dir = synthetic_dir(&dir);
    reset_dir(&synth_dir)?;
    let g = &cfg.generator;
    let ids = match g.kind {
        GeneratorKind::Cutpaste => stages::generate_cutpaste(
            ds,
            &partition,
            &g.cutpaste,
            g.count,
            cfg.master_seed,
            &task,
            &synth_dir,
        )?,
        GeneratorKind::Diffusion => {
            stages::generate_diffusion(ds, &partition, &g.diffusion, &synth_dir)?
        }
        GeneratorKind::Auxiliary => {
            let aux = cfg.paths.auxiliary.as_deref().expect("validated");
            stages::generate_auxiliary(aux, g.count, cfg.master_seed, &task, &synth_dir)?
        }
    };
    let synthetic = stages::mix(&partition, &ids)?;
    stages::write_set(&dir.join("validation.csv"), &synthetic)?;

    let real = if ds.has_test() {
        stages::real_sets(ds, class, mode)?
    } else {
        Vec::new()
    };
    for (name, set) in &real {
        stages::write_set(&dir.join(format!("real-{name}.csv")), set)?;
    }
    Ok(PreparedTask {
        class: class.to_string(),
        task,
        dir,
        partition,
        synthetic,
        real,
    })
}

/// Every real and synthetic image, sorted by id.
pub fn extraction_inputs(
    ds: &Dataset,
    synthetic_dirs: &[PathBuf],
) -> Result<Vec<(String, PathBuf)>> {
    let mut images = ds.images();
    for dir in synthetic_dirs {
        images.extend(crate::dataset::png_stems(dir)?);
    }
    images.sort();
    if let Some(w) = images.windows(2).find(|w| w[0].0 == w[1].0) {
        if w[0].1 != w[1].1 && std::fs::read(&w[0].1).ok() != std::fs::read(&w[1].1).ok() {
            return Err(CliError::Invalid(format!(
                "image id {:?} refers to two different images",
                w[0].0
            )));
        }
    }
    images.dedup_by(|a, b| a.0 == b.0);
    Ok(images)
}

fn score_task(
    cfg: &PipelineConfig,
    t: &PreparedTask,
    banks: &[EmbeddingBank],
    opts: &DetectorOptions,
) -> Result<(ScoredTask, Vec<swsa_core::selection::Cell>)> {
    let synth_bank = t.partition.bank_ids(cfg.selection.synthetic_bank);
    let real_bank = t.partition.support();
    let mut synthetic = Vec::new();
    let mut cells = Vec::new();
    for (cand, bank) in cfg.candidates.iter().zip(banks) {
        let (synth_path, cand_dir) = stages::score_paths(&t.dir, &cand.id);
        reset_dir(&cand_dir)?;
        let s = score_validation(bank, &synth_bank, &t.synthetic, opts)?;
        stages::write_scored(&synth_path, &s)?;
        let mut real = Vec::new();
        for (name, set) in &t.real {
            let r = score_validation(bank, &real_bank, set, opts)?;
            stages::write_scored(&stages::real_score_path(&cand_dir, name), &r)?;
            real.push(r);
        }
        cells.push(stages::cell_of(&s, &real)?);
        synthetic.push(s);
    }
    Ok((ScoredTask { synthetic }, cells))
}

fn hardest_entries(
    cfg: &PipelineConfig,
    prepared: &[PreparedTask],
    scored: &[ScoredTask],
    matrix: &EvaluationMatrix,
) -> Result<Vec<HardestEntry>> {
    let real = matrix.mean_real();
    cfg.selection
        .hardest
        .iter()
        .map(|&n| {
            let mut sums = vec![0.0; cfg.candidates.len()];
            for (t, s) in prepared.iter().zip(scored) {
                let difficulty = difficulty_scores(&s.synthetic)?;
                let kept = filter_hardest(&t.synthetic, &difficulty, Some(n))?;
                let keep: std::collections::HashSet<String> = kept.ids().into_iter().collect();
                for (sum, set) in sums.iter_mut().zip(&s.synthetic) {
                    *sum += swsa_core::metrics::auroc(&set.filter(|id| keep.contains(id)))?;
                }
            }
            let means: Vec<f64> = sums.iter().map(|s| s / prepared.len() as f64).collect();
            let rank = match &real {
                Some(r) => rank_entry(
                    &means,
                    r,
                    cfg.selection.alpha,
                    cfg.selection.bonferroni_tests,
                )?,
                None => None,
            };
            Ok(HardestEntry {
                n,
                mean_synthetic_auroc: cfg
                    .candidates
                    .iter()
                    .map(|c| c.id.clone())
                    .zip(means)
                    .collect(),
                rank,
            })
        })
        .collect()
}

fn tv_entry(
    cfg: &PipelineConfig,
    ds: &Dataset,
    prepared: &[PreparedTask],
    banks: &[EmbeddingBank],
) -> Result<Option<TvEntry>> {
    if !cfg.tv.enabled {
        return Ok(None);
    }
    if !ds.has_test() {
        return Err(CliError::Invalid(
            "total variation needs a test split for real anomalies".into(),
        ));
    }
    let idx = match &cfg.tv.candidate {
        Some(c) => cfg
            .candidates
            .iter()
            .position(|x| &x.id == c)
            .expect("validated"),
        None => 0,
    };
    let bank = &banks[idx];
    let tv_cfg = TvConfig {
        runs: cfg.tv.runs,
        k: cfg.tv.k,
        max_iters: cfg.tv.max_iters,
        tol: cfg.tv.tol,
        seed: cfg.master_seed,
    };
    let mut per_task = BTreeMap::new();
    for t in prepared {
        let support = t.partition.support();
        let real_out: Vec<String> = ds
            .test
            .iter()
            .filter(|(c, _)| **c != t.class)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect();
        let d1: Vec<&String> = support.iter().chain(&real_out).collect();
        let d2: Vec<&String> = support.iter().chain(t.synthetic.anomaly_ids()).collect();
        let tv = total_variation(&bank.select("d1", &d1)?, &bank.select("d2", &d2)?, &tv_cfg)?;
        per_task.insert(t.task.clone(), tv);
    }
    let mean = per_task.values().sum::<f64>() / per_task.len() as f64;
    Ok(Some(TvEntry {
        candidate: cfg.candidates[idx].id.clone(),
        per_task,
        mean,
    }))
}

pub fn descriptors(cfg: &PipelineConfig) -> Vec<CandidateDescriptor> {
    cfg.candidates
        .iter()
        .map(|c| CandidateDescriptor::extractor(&c.id, c.size_rank))
        .collect()
}

/// Runs every stage and writes all artifacts under `cfg.paths.out`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let ds = Dataset::scan(&cfg.paths.data)?;
    let out = &cfg.paths.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let prepared = ds
        .classes
        .iter()
        .map(|class| prepare(cfg, &ds, class))
        .collect::<Result<Vec<_>>>()?;
    log::info!("prepared {} tasks", prepared.len());

    let synth_dirs: Vec<PathBuf> = prepared.iter().map(|t| synthetic_dir(&t.dir)).collect();
    let images = extraction_inputs(&ds, &synth_dirs)?;
    let staging = out.join("staging");
    let emb_dir = out.join("embeddings");
    std::fs::create_dir_all(&emb_dir).map_err(|e| CliError::io(&emb_dir, e))?;
    let mut banks = Vec::new();
    for cand in &cfg.candidates {
        let bank = cand.extractor.extract(&cand.id, &images, &staging)?;
        write_ebank_file(&bank, &emb_dir.join(format!("{}.ebank", cand.id)))?;
        banks.push(bank);
    }
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    log::info!(
        "extracted {} images with {} candidates",
        images.len(),
        banks.len()
    );

    let opts = DetectorOptions {
        k: cfg.detector.k,
        normalize: cfg.detector.normalize,
    };
    let results = prepared
        .par_iter()
        .map(|t| score_task(cfg, t, &banks, &opts))
        .collect::<Result<Vec<_>>>()?;
    let (scored, cells): (Vec<ScoredTask>, Vec<_>) = results.into_iter().unzip();
    let matrix = EvaluationMatrix::new(
        prepared.iter().map(|t| t.task.clone()).collect(),
        descriptors(cfg),
        cells,
    )?;
    write_atomic(&out.join("matrix.csv"), &stages::matrix_csv(&matrix)?)?;

    let sel_dir = out.join("selection");
    std::fs::create_dir_all(&sel_dir).map_err(|e| CliError::io(&sel_dir, e))?;
    let mut strategies = Vec::new();
    for s in cfg.strategies() {
        let report = select(&matrix, &s)?;
        write_atomic(
            &sel_dir.join(format!("{}.json", s.name())),
            &stages::json_bytes(&report),
        )?;
        strategies.push(report);
    }

    let synth_means = matrix.mean_synthetic();
    let real_means = matrix.mean_real();
    let rank = match &real_means {
        Some(r) => rank_entry(
            &synth_means,
            r,
            cfg.selection.alpha,
            cfg.selection.bonferroni_tests,
        )?,
        None => None,
    };
    let averages = cfg
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (
                c.id.clone(),
                AverageEntry {
                    synthetic_auroc: synth_means[i],
                    real_auroc: real_means.as_ref().map(|r| r[i]),
                },
            )
        })
        .collect();
    let tasks = prepared
        .iter()
        .enumerate()
        .map(|(t, p)| TaskEntry {
            task_id: p.task.clone(),
            inlier_class: p.class.clone(),
            seed_count: p.partition.seed.len(),
            held_out_count: p.partition.held_out.len(),
            synthetic_count: p.synthetic.anomaly_ids().len(),
            aurocs: cfg
                .candidates
                .iter()
                .map(|c| c.id.clone())
                .zip(matrix.row(t).iter().copied())
                .collect(),
        })
        .collect();

    let report = RunReport {
        tool: TOOL,
        version: VERSION,
        config_sha256: cfg.digest(),
        master_seed: cfg.master_seed,
        mode: cfg.selection.mode,
        generator: serde_json::to_value(cfg.generator.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        candidates: descriptors(cfg),
        tasks,
        averages,
        strategies,
        rank,
        hardest: hardest_entries(cfg, &prepared, &scored, &matrix)?,
        tv: tv_entry(cfg, &ds, &prepared, &banks)?,
    };
    write_atomic(&out.join("report.json"), &stages::json_bytes(&report))?;
    write_atomic(&out.join("report.csv"), &summary_csv(&report)?)?;
    Ok(report)
}
