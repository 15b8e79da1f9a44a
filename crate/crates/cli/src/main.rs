use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swsa_cli::config::{
    parse_strategy, DiffusionSection, PipelineConfig, SplitConfig, SyntheticBank,
};
use swsa_cli::dataset::{png_stems, write_desk_dataset, Dataset, DeskSpec};
use swsa_cli::extract::Extractor;
use swsa_cli::pipeline::{extraction_inputs, run_pipeline};
use swsa_cli::stages;
use swsa_cli::{CliError, Result};
use swsa_core::cutpaste::CutPasteParams;
use swsa_core::diffusion::protocol::serve_denoiser;
use swsa_core::diffusion::AnalyticGaussianDenoiser;
use swsa_core::metrics::{bonferroni_threshold, is_significant, kendall_tau};
use swsa_core::model::{
    read_ebank_file, read_validation_set_file, write_atomic, write_ebank_file, CandidateDescriptor,
    RasterImage,
};
use swsa_core::selection::{
    select, select_prompt, EvaluationMatrix, PromptCatalog, PromptTask, TaskMode,
};
use swsa_core::tv::{total_variation, TvConfig};

#[derive(Parser)]
#[command(
    name = "swsa",
    version,
    about = "Detector and prompt selection with synthetic anomalies"
)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "SWSA_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides paths.out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small structured multi-class PNG dataset.
    SynthDataset(SynthDatasetArgs),
    /// Split one class's support set into seed and held-out normals.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long)]
        seed: u64,
        /// Task id mixed into the seed stream, e.g. `class0/one-vs-rest`.
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0.5)]
        seed_fraction: f64,
        #[arg(long)]
        seed_count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// CutPaste anomalies from the seed images of a partition.
    GenerateCutpaste {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        task: String,
        #[command(flatten)]
        params: CutPasteArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Style/content diffusion anomalies from the seed images of a partition.
    GenerateDiffusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample auxiliary images as anomalies.
    GenerateAuxiliary {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the synthetic validation set: held-out normals plus generated images.
    Mix {
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the labeled ground-truth sets of one class as `real-<name>.csv`.
    RealSets {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, default_value = "one-vs-rest")]
        mode: TaskMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed images into an EBANK file.
    Extract {
        /// Bank name, usually the candidate id.
        #[arg(long)]
        name: String,
        /// `identity` or `noisy:SIGMA[:SEED]`.
        #[arg(long, conflicts_with = "command")]
        extractor: Option<String>,
        /// External extractor; `{images}` and `{output}` are substituted.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        command: Option<Vec<String>>,
        /// Dataset root; all support and test images are embedded.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Extra PNG directories.
        #[arg(long)]
        images: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// kNN anomaly scores for a labeled set.
    ScoreKnn {
        #[arg(long)]
        embeddings: PathBuf,
        /// Partition file whose ids form the feature bank.
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value = "seed")]
        bank: SyntheticBank,
        /// Labeled `id,label` set.
        #[arg(long)]
        set: PathBuf,
        #[arg(long, default_value_t = swsa_core::knn::DEFAULT_K)]
        k: usize,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect per-task score files into a task by candidate AUROC matrix.
    Evaluate {
        /// Directory holding one subdirectory per class.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, default_value = "one-vs-rest")]
        mode: TaskMode,
        /// `ID` or `ID:SIZE_RANK`, in candidate order.
        #[arg(long = "candidate", required = true)]
        candidates: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a selection strategy to an AUROC matrix.
    SelectModel {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "swsa")]
        strategy: String,
        /// Seed for the `random` strategy.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a prompt template per task from similarity banks.
    SelectPrompt {
        /// Builtin catalog name or a tab-separated file.
        #[arg(long)]
        catalog: String,
        /// Task directories with normal.ebank, anomaly.ebank, validation.csv and
        /// optional real-*.csv; the directory name is the task id.
        #[arg(long = "task", required = true)]
        tasks: Vec<PathBuf>,
        #[arg(long, default_value = "swsa")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kendall correlation of two `candidate,auroc` files.
    Rank {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 9)]
        tests: usize,
    },
    /// Total variation between two embedding banks.
    Tv {
        d1: PathBuf,
        d2: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the analytic Gaussian denoiser over stdin/stdout.
    ServeDenoiser {
        /// Directory of PNGs whose mean is the prior mean.
        #[arg(long)]
        mean_of: PathBuf,
        #[command(flatten)]
        diffusion: DiffusionArgs,
    },
}

#[derive(Args)]
struct SynthDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    support: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    #[arg(long, default_value_t = 16)]
    size: u32,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.3)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CutPasteArgs {
    #[arg(long, default_value_t = CutPasteParams::default().area_ratio.0)]
    area_min: f64,
    #[arg(long, default_value_t = CutPasteParams::default().area_ratio.1)]
    area_max: f64,
    #[arg(long, default_value_t = CutPasteParams::default().aspect_ratio.0)]
    aspect_min: f64,
    #[arg(long, default_value_t = CutPasteParams::default().aspect_ratio.1)]
    aspect_max: f64,
}

#[derive(Args)]
struct DiffusionArgs {
    #[arg(long, default_value_t = DiffusionSection::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = DiffusionSection::default().num_steps)]
    steps: usize,
    #[arg(long, default_value_t = DiffusionSection::default().train_steps)]
    train_steps: usize,
    #[arg(long, default_value_t = DiffusionSection::default().beta_start)]
    beta_start: f64,
    #[arg(long, default_value_t = DiffusionSection::default().beta_end)]
    beta_end: f64,
    #[arg(long, default_value_t = DiffusionSection::default().sigma2)]
    sigma2: f64,
    /// External denoiser speaking the newline-JSON protocol.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    denoiser: Option<Vec<String>>,
}

impl DiffusionArgs {
    fn section(&self) -> DiffusionSection {
        DiffusionSection {
            gamma: self.gamma,
            num_steps: self.steps,
            train_steps: self.train_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            sigma2: self.sigma2,
            command: self.denoiser.clone(),
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => Ok(write_atomic(path, bytes)?),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn candidate_arg(spec: &str) -> Result<CandidateDescriptor> {
    match spec.split_once(':') {
        Some((id, rank)) => {
            let rank = rank.parse().map_err(|_| {
                CliError::Invalid(format!("--candidate {spec:?}: size rank is not an integer"))
            })?;
            Ok(CandidateDescriptor::extractor(id, Some(rank)))
        }
        None => Ok(CandidateDescriptor::extractor(spec, None)),
    }
}

fn read_auroc_column(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let bad = || {
            CliError::Invalid(format!(
                "{} row {}: expected candidate,auroc",
                path.display(),
                i + 2
            ))
        };
        let id = rec.get(0).ok_or_else(bad)?;
        let v: f64 = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if out.insert(id.to_string(), v).is_some() {
            return Err(CliError::Invalid(format!(
                "{}: duplicate candidate {id:?}",
                path.display()
            )));
        }
    }
    Ok(out)
}

fn prompt_task(dir: &Path) -> Result<PromptTask> {
    let task_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Invalid(format!("{}: not a task directory", dir.display())))?
        .to_string();
    let mut real_files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("real-") && n.ends_with(".csv"))
        })
        .collect();
    real_files.sort();
    Ok(PromptTask {
        task_id,
        normal_sims: read_ebank_file(&dir.join("normal.ebank"))?,
        anomaly_sims: read_ebank_file(&dir.join("anomaly.ebank"))?,
        synthetic: read_validation_set_file(&dir.join("validation.csv"))?,
        real: real_files
            .iter()
            .map(|p| Ok(read_validation_set_file(p)?))
            .collect::<Result<Vec<_>>>()?,
    })
}

fn mean_image(dir: &Path) -> Result<Vec<f64>> {
    let files = png_stems(dir)?;
    if files.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no PNG images",
            dir.display()
        )));
    }
    let mut mu: Vec<f64> = Vec::new();
    for (_, path) in &files {
        let x = RasterImage::load_png(path)?.to_signed_unit();
        if mu.is_empty() {
            mu = vec![0.0; x.len()];
        }
        if x.len() != mu.len() {
            return Err(CliError::Invalid(format!(
                "{}: image size differs",
                path.display()
            )));
        }
        for (m, v) in mu.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= files.len() as f64;
    }
    Ok(mu)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.apply_env(|k| std::env::var(k).ok())?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.paths.out = o;
            }
            let report = run_pipeline(&cfg)?;
            for s in &report.strategies {
                match s.pick_rate {
                    Some(rate) => println!(
                        "{}: pick rate {rate:.3} over {} tasks",
                        s.strategy, s.task_count
                    ),
                    None => println!("{}: {} tasks", s.strategy, s.task_count),
                }
            }
            if let Some(r) = &report.rank {
                println!("tau {:.4} p {:.3e}", r.tau, r.p_value);
            }
            println!("report: {}", cfg.paths.out.join("report.json").display());
        }
        Command::SynthDataset(a) => write_desk_dataset(
            &a.out,
            &DeskSpec {
                classes: a.classes,
                support: a.support,
                test: a.test,
                size: a.size,
                noise: a.noise,
                separation: a.separation,
                seed: a.seed,
            },
        )?,
        Command::Partition {
            data,
            class,
            seed,
            task,
            seed_fraction,
            seed_count,
            out,
        } => {
            let ds = Dataset::scan(&data)?;
            let split = SplitConfig {
                seed_fraction,
                seed_count,
            };
            let p = stages::partition_task(ds.support_of(&class)?, &split, seed, &task)?;
            stages::write_partition(&out, &p)?;
        }
        Command::GenerateCutpaste {
            data,
            partition,
            count,
            seed,
            task,
            params,
            out,
        } => {
            let ds = Dataset::scan(&data)?;
            let p = stages::read_partition(&partition)?;
            let params = CutPasteParams {
                area_ratio: (params.area_min, params.area_max),
                aspect_ratio: (params.aspect_min, params.aspect_max),
                ..CutPasteParams::default()
            };
            let ids = stages::generate_cutpaste(&ds, &p, &params, count, seed, &task, &out)?;
            log::info!("wrote {} images", ids.len());
        }
        Command::GenerateDiffusion {
            data,
            partition,
            diffusion,
            out,
        } => {
            let ds = Dataset::scan(&data)?;
            let p = stages::read_partition(&partition)?;
            let ids = stages::generate_diffusion(&ds, &p, &diffusion.section(), &out)?;
            log::info!("wrote {} images", ids.len());
        }
        Command::GenerateAuxiliary {
            pool,
            count,
            seed,
            task,
            out,
        } => {
            stages::generate_auxiliary(&pool, count, seed, &task, &out)?;
        }
        Command::Mix {
            partition,
            synthetic,
            out,
        } => {
            let p = stages::read_partition(&partition)?;
            let ids: Vec<String> = png_stems(&synthetic)?
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            stages::write_set(&out, &stages::mix(&p, &ids)?)?;
        }
        Command::RealSets {
            data,
            class,
            mode,
            out,
        } => {
            let ds = Dataset::scan(&data)?;
            for (name, set) in stages::real_sets(&ds, &class, mode)? {
                stages::write_set(&out.join(format!("real-{name}.csv")), &set)?;
            }
        }
        Command::Extract {
            name,
            extractor,
            command,
            data,
            images,
            out,
        } => {
            let extractor = match (extractor, command) {
                (_, Some(argv)) => Extractor::Command { argv },
                (Some(spec), None) => Extractor::parse_builtin(&spec).map_err(CliError::Invalid)?,
                (None, None) => {
                    return Err(CliError::Invalid("give --extractor or --command".into()))
                }
            };
            let inputs = match data {
                Some(root) => extraction_inputs(&Dataset::scan(&root)?, &images)?,
                None => {
                    let mut all = Vec::new();
                    for dir in &images {
                        all.extend(png_stems(dir)?);
                    }
                    all.sort();
                    all
                }
            };
            let staging = out.with_extension("staging");
            let bank = extractor.extract(&name, &inputs, &staging)?;
            if staging.exists() {
                std::fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
            }
            write_ebank_file(&bank, &out)?;
        }
        Command::ScoreKnn {
            embeddings,
            partition,
            bank,
            set,
            k,
            normalize,
            out,
        } => {
            let emb = read_ebank_file(&embeddings)?;
            let p = stages::read_partition(&partition)?;
            let set = read_validation_set_file(&set)?;
            let opts = swsa_core::selection::DetectorOptions { k, normalize };
            let scored =
                swsa_core::selection::score_validation(&emb, &p.bank_ids(bank), &set, &opts)?;
            stages::write_scored(&out, &scored)?;
        }
        Command::Evaluate {
            tasks,
            mode,
            candidates,
            out,
        } => {
            let descriptors = candidates
                .iter()
                .map(|c| candidate_arg(c))
                .collect::<Result<Vec<_>>>()?;
            let ids: Vec<String> = descriptors.iter().map(|d| d.id.clone()).collect();
            let mut classes: Vec<String> = std::fs::read_dir(&tasks)
                .map_err(|e| CliError::io(&tasks, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().to_str().map(str::to_string))
                .collect();
            classes.sort();
            let cells = classes
                .iter()
                .map(|c| stages::read_task_cells(&tasks.join(c), &ids))
                .collect::<Result<Vec<_>>>()?;
            let task_ids = classes.iter().map(|c| stages::task_id(c, mode)).collect();
            let matrix = EvaluationMatrix::new(task_ids, descriptors, cells)?;
            write_atomic(&out, &stages::matrix_csv(&matrix)?)?;
        }
        Command::SelectModel {
            matrix,
            strategy,
            seed,
            out,
        } => {
            let m = stages::read_matrix_csv(&matrix)?;
            let s = parse_strategy(&strategy, seed).map_err(CliError::Invalid)?;
            emit(out.as_deref(), &stages::json_bytes(&select(&m, &s)?))?;
        }
        Command::SelectPrompt {
            catalog,
            tasks,
            strategy,
            seed,
            out,
        } => {
            let catalog = if Path::new(&catalog).is_file() {
                let text = std::fs::read_to_string(&catalog)
                    .map_err(|e| CliError::io(Path::new(&catalog), e))?;
                PromptCatalog::parse(&catalog, &text)?
            } else {
                PromptCatalog::builtin(&catalog)?
            };
            let tasks = tasks
                .iter()
                .map(|d| prompt_task(d))
                .collect::<Result<Vec<_>>>()?;
            let s = parse_strategy(&strategy, seed).map_err(CliError::Invalid)?;
            emit(
                out.as_deref(),
                &stages::json_bytes(&select_prompt(&catalog, &tasks, &s)?),
            )?;
        }
        Command::Rank { a, b, alpha, tests } => {
            let a = read_auroc_column(&a)?;
            let b = read_auroc_column(&b)?;
            if a.keys().ne(b.keys()) {
                return Err(CliError::Invalid(
                    "the two files list different candidates".into(),
                ));
            }
            let x: Vec<f64> = a.values().copied().collect();
            let y: Vec<f64> = b.values().copied().collect();
            let k = kendall_tau(&x, &y)?;
            let threshold = bonferroni_threshold(alpha, tests)?;
            println!("n {}", x.len());
            println!("tau {:.6}", k.tau);
            println!("p {:.6e}", k.p_value);
            println!("method {:?}", k.method);
            println!("threshold {threshold:.6e}");
            println!("significant {}", is_significant(k.p_value, threshold));
        }
        Command::Tv {
            d1,
            d2,
            runs,
            k,
            seed,
        } => {
            let cfg = TvConfig {
                runs,
                k,
                seed,
                ..TvConfig::default()
            };
            let tv = total_variation(&read_ebank_file(&d1)?, &read_ebank_file(&d2)?, &cfg)?;
            println!("{tv}");
        }
        Command::ServeDenoiser { mean_of, diffusion } => {
            let section = diffusion.section();
            let schedule = stages::schedule_of(&section)?;
            let denoiser =
                AnalyticGaussianDenoiser::new(mean_image(&mean_of)?, section.sigma2, schedule)?;
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            serve_denoiser(&denoiser, stdin, stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match cli.jobs {
        Some(0) => {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
