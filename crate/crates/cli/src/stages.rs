//! Pipeline stages. Each subcommand runs exactly one of these, and the full
//! pipeline chains them, so both paths produce identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use swsa_core::cutpaste::{generate_cutpaste_set, CutPasteParams};
use swsa_core::diffusion::protocol::ProcessDenoiser;
use swsa_core::diffusion::{
    generate_diffusion_set, AnalyticGaussianDenoiser, Denoiser, NoiseSchedule,
};
use swsa_core::metrics::auroc;
use swsa_core::model::{
    write_atomic, CandidateDescriptor, RasterImage, ScoredSet, SyntheticValidationSet,
};
use swsa_core::sampling::{mix_validation, partition_support, split_style_content, SplitSpec};
use swsa_core::selection::{sample_auxiliary, worst_case_auroc, Cell, EvaluationMatrix, TaskMode};

use crate::config::{DiffusionSection, SplitConfig, SyntheticBank};
use crate::dataset::{png_stems, Dataset};
use crate::error::{CliError, Result};

pub fn task_id(class: &str, mode: TaskMode) -> String {
    format!("{class}/{mode}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub seed: Vec<String>,
    pub held_out: Vec<String>,
}

impl Partition {
    pub fn support(&self) -> Vec<String> {
        let mut all: Vec<String> = self.seed.iter().chain(&self.held_out).cloned().collect();
        all.sort();
        all
    }

    pub fn bank_ids(&self, bank: SyntheticBank) -> Vec<String> {
        match bank {
            SyntheticBank::Seed => self.seed.clone(),
            SyntheticBank::Support => self.support(),
        }
    }
}

pub fn partition_task(
    support: &[String],
    split: &SplitConfig,
    master_seed: u64,
    task: &str,
) -> Result<Partition> {
    let spec = SplitSpec {
        master_seed,
        seed_fraction: split.seed_fraction,
        seed_count: split.seed_count,
        context_tag: task.to_string(),
    };
    let (seed, held_out) = partition_support(support, &spec)?;
    Ok(Partition { seed, held_out })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(header)
            .and_then(|_| fill(&mut w))
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Invalid(format!("csv: {e}")))?;
    }
    Ok(buf)
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let found = r
        .headers()
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(CliError::Invalid(format!(
            "{}: expected header {}",
            path.display(),
            header.join(",")
        )));
    }
    r.records()
        .map(|rec| rec.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    let bytes = csv_bytes(&["id", "role"], |w| {
        for id in &p.seed {
            w.write_record([id.as_str(), "seed"])?;
        }
        for id in &p.held_out {
            w.write_record([id.as_str(), "in"])?;
        }
        Ok(())
    })?;
    Ok(write_atomic(path, &bytes)?)
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let mut p = Partition {
        seed: Vec::new(),
        held_out: Vec::new(),
    };
    for (i, rec) in read_csv(path, &["id", "role"])?.iter().enumerate() {
        match &rec[1] {
            "seed" => p.seed.push(rec[0].to_string()),
            "in" => p.held_out.push(rec[0].to_string()),
            other => {
                return Err(CliError::Invalid(format!(
                    "{} row {}: role {other:?} is not seed or in",
                    path.display(),
                    i + 2
                )))
            }
        }
    }
    Ok(p)
}

fn load_all(ds: &Dataset, ids: &[String]) -> Result<Vec<(String, RasterImage)>> {
    ids.iter()
        .map(|id| Ok((id.clone(), ds.load(id)?)))
        .collect()
}

fn save_all(out_dir: &Path, images: &[(String, RasterImage)]) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for (id, img) in images {
        img.save_png(&out_dir.join(format!("{id}.png")))?;
    }
    let mut ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    ids.sort();
    Ok(ids)
}

pub fn generate_cutpaste(
    ds: &Dataset,
    p: &Partition,
    params: &CutPasteParams,
    count: usize,
    master_seed: u64,
    task: &str,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let seeds = load_all(ds, &p.seed)?;
    let samples = generate_cutpaste_set(&seeds, count, params, master_seed, task)?;
    let images: Vec<(String, RasterImage)> = samples.into_iter().map(|s| (s.id, s.image)).collect();
    save_all(out_dir, &images)
}

/// Builds the denoiser: an external process when configured, otherwise the
/// analytic Gaussian denoiser centred on the mean of `seeds`.
pub fn make_denoiser(
    section: &DiffusionSection,
    schedule: &NoiseSchedule,
    seeds: &[(String, RasterImage)],
) -> Result<Box<dyn Denoiser>> {
    if let Some(argv) = &section.command {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| CliError::config("generator.diffusion.command", "empty command"))?;
        return Ok(Box::new(ProcessDenoiser::spawn(program, args)?));
    }
    let dim = seeds[0].1.to_signed_unit().len();
    let mut mu = vec![0.0; dim];
    for (_, img) in seeds {
        for (m, v) in mu.iter_mut().zip(img.to_signed_unit()) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= seeds.len() as f64;
    }
    Ok(Box::new(AnalyticGaussianDenoiser::new(
        mu,
        section.sigma2,
        schedule.clone(),
    )?))
}

pub fn schedule_of(section: &DiffusionSection) -> Result<NoiseSchedule> {
    Ok(NoiseSchedule::linear(
        section.beta_start,
        section.beta_end,
        section.train_steps,
    )?)
}

pub fn generate_diffusion(
    ds: &Dataset,
    p: &Partition,
    section: &DiffusionSection,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let (style_ids, content_ids) = split_style_content(&p.seed)?;
    let style = load_all(ds, &style_ids)?;
    let content = load_all(ds, &content_ids)?;
    let schedule = schedule_of(section)?;
    let all: Vec<(String, RasterImage)> = style.iter().chain(&content).cloned().collect();
    let denoiser = make_denoiser(section, &schedule, &all)?;
    let images = generate_diffusion_set(&style, &content, &section.engine(), &denoiser, &schedule)?;
    save_all(out_dir, &images)
}

pub fn generate_auxiliary(
    aux_dir: &Path,
    count: usize,
    master_seed: u64,
    task: &str,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let pool = png_stems(aux_dir)?;
    let stems: Vec<&str> = pool.iter().map(|(s, _)| s.as_str()).collect();
    let picked = sample_auxiliary(&stems, count, master_seed, task)?;
    let images = picked
        .iter()
        .map(|id| {
            let path = &pool[stems
                .binary_search(&id.as_str())
                .expect("sampled from pool")]
            .1;
            Ok((format!("aux_{id}"), RasterImage::load_png(path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    save_all(out_dir, &images)
}

/// Held-out normals against synthetic anomalies, both sorted by id.
pub fn mix(p: &Partition, synthetic_ids: &[String]) -> Result<SyntheticValidationSet> {
    let mut normals = p.held_out.clone();
    normals.sort();
    let mut anomalies = synthetic_ids.to_vec();
    anomalies.sort();
    Ok(mix_validation(&normals, &anomalies)?)
}

/// Ground-truth sets: test normals of the inlier class against test images of
/// the other classes, pooled or one set per class.
pub fn real_sets(
    ds: &Dataset,
    inlier: &str,
    mode: TaskMode,
) -> Result<Vec<(String, SyntheticValidationSet)>> {
    let normals = ds
        .test
        .get(inlier)
        .cloned()
        .ok_or_else(|| CliError::Invalid(format!("no test images for class {inlier:?}")))?;
    let others: Vec<(&String, &Vec<String>)> = ds
        .test
        .iter()
        .filter(|(c, _)| c.as_str() != inlier)
        .collect();
    if others.is_empty() {
        return Err(CliError::Invalid(format!(
            "no test images outside class {inlier:?}"
        )));
    }
    Ok(match mode {
        TaskMode::OneVsRest => {
            let anomalies = others
                .iter()
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect();
            vec![(
                "rest".to_string(),
                SyntheticValidationSet::new(normals, anomalies)?,
            )]
        }
        TaskMode::OneVsClosest => others
            .into_iter()
            .map(|(c, ids)| {
                Ok((
                    c.clone(),
                    SyntheticValidationSet::new(normals.clone(), ids.clone())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?,
    })
}

pub fn write_set(path: &Path, set: &SyntheticValidationSet) -> Result<()> {
    let mut buf = Vec::new();
    swsa_core::model::write_validation_set(set, &mut buf)?;
    Ok(write_atomic(path, &buf)?)
}

pub fn write_scored(path: &Path, set: &ScoredSet) -> Result<()> {
    let mut buf = Vec::new();
    swsa_core::model::write_scores(set, &mut buf)?;
    Ok(write_atomic(path, &buf)?)
}

/// Synthetic and per-out-class real AUROCs reduced to one matrix cell.
pub fn cell_of(synthetic: &ScoredSet, real: &[ScoredSet]) -> Result<Cell> {
    let real_auroc = if real.is_empty() {
        None
    } else {
        let per = real
            .iter()
            .map(auroc)
            .collect::<swsa_core::Result<Vec<f64>>>()?;
        Some(worst_case_auroc(&per)?)
    };
    Ok(Cell {
        synthetic_auroc: auroc(synthetic)?,
        real_auroc,
    })
}

/// Score files of one (task, candidate): `synthetic.csv` and `real-<name>.csv`.
pub fn score_paths(task_dir: &Path, candidate: &str) -> (PathBuf, PathBuf) {
    let dir = task_dir.join("scores").join(candidate);
    (dir.join("synthetic.csv"), dir)
}

pub fn real_score_path(candidate_dir: &Path, name: &str) -> PathBuf {
    candidate_dir.join(format!("real-{name}.csv"))
}

/// Reads every score file of a task directory back into a matrix row.
pub fn read_task_cells(task_dir: &Path, candidates: &[String]) -> Result<Vec<Cell>> {
    candidates
        .iter()
        .map(|c| {
            let (synthetic, dir) = score_paths(task_dir, c);
            let synthetic = swsa_core::model::read_scores_file(&synthetic)?;
            let mut real_files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| CliError::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("real-") && n.ends_with(".csv"))
                })
                .collect();
            real_files.sort();
            let real = real_files
                .iter()
                .map(|p| Ok(swsa_core::model::read_scores_file(p)?))
                .collect::<Result<Vec<_>>>()?;
            cell_of(&synthetic, &real)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct MatrixRow<'a> {
    task: &'a str,
    candidate: &'a str,
    size_rank: Option<u32>,
    synthetic_auroc: f64,
    real_auroc: Option<f64>,
}

pub fn matrix_csv(m: &EvaluationMatrix) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        for (t, task) in m.tasks().iter().enumerate() {
            for (c, cand) in m.candidates().iter().enumerate() {
                let cell = m.cell(t, c);
                w.serialize(MatrixRow {
                    task,
                    candidate: &cand.id,
                    size_rank: cand.size_rank,
                    synthetic_auroc: cell.synthetic_auroc,
                    real_auroc: cell.real_auroc,
                })
                .map_err(|e| CliError::Invalid(format!("csv: {e}")))?;
            }
        }
        w.flush()
            .map_err(|e| CliError::Invalid(format!("csv: {e}")))?;
    }
    Ok(buf)
}

pub fn read_matrix_csv(path: &Path) -> Result<EvaluationMatrix> {
    let rows = read_csv(
        path,
        &[
            "task",
            "candidate",
            "size_rank",
            "synthetic_auroc",
            "real_auroc",
        ],
    )?;
    let mut tasks: Vec<String> = Vec::new();
    let mut candidates: Vec<CandidateDescriptor> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    let num = |s: &str, row: usize| -> Result<f64> {
        s.parse().map_err(|_| {
            CliError::Invalid(format!(
                "{} row {row}: {s:?} is not a number",
                path.display()
            ))
        })
    };
    for (i, rec) in rows.iter().enumerate() {
        let row = i + 2;
        let t = match tasks.iter().position(|x| x == &rec[0]) {
            Some(t) => t,
            None => {
                tasks.push(rec[0].to_string());
                tasks.len() - 1
            }
        };
        let c = match candidates.iter().position(|x| x.id == rec[1]) {
            Some(c) => c,
            None => {
                let rank = if rec[2].is_empty() {
                    None
                } else {
                    Some(rec[2].parse().map_err(|_| {
                        CliError::Invalid(format!("{} row {row}: bad size_rank", path.display()))
                    })?)
                };
                candidates.push(CandidateDescriptor::extractor(&rec[1], rank));
                candidates.len() - 1
            }
        };
        let real = if rec[4].is_empty() {
            None
        } else {
            Some(num(&rec[4], row)?)
        };
        cells.insert(
            (t, c),
            Cell {
                synthetic_auroc: num(&rec[3], row)?,
                real_auroc: real,
            },
        );
    }
    let grid = (0..tasks.len())
        .map(|t| {
            (0..candidates.len())
                .map(|c| {
                    cells.get(&(t, c)).copied().ok_or_else(|| {
                        CliError::Invalid(format!(
                            "{}: missing cell ({}, {})",
                            path.display(),
                            tasks[t],
                            candidates[c].id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationMatrix::new(tasks, candidates, grid)?)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serialises");
    bytes.push(b'\n');
    bytes
}
