//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swsa_core::cutpaste::CutPasteParams;
use swsa_core::diffusion::DiffusionConfig;
use swsa_core::selection::{Strategy, TaskMode};

use crate::error::{CliError, Result};
use crate::extract::Extractor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    pub candidates: Vec<CandidateConfig>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub tv: TvSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset root with `support/<class>/*.png` and optionally `test/<class>/*.png`.
    pub data: PathBuf,
    pub out: PathBuf,
    /// Flat directory of PNGs for the auxiliary generator.
    #[serde(default)]
    pub auxiliary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed_fraction: f64,
    pub seed_count: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed_fraction: 0.5,
            seed_count: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Cutpaste,
    Diffusion,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Anomalies per task for CutPaste and auxiliary sampling.
    pub count: usize,
    pub cutpaste: CutPasteParams,
    pub diffusion: DiffusionSection,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Cutpaste,
            count: 100,
            cutpaste: CutPasteParams::default(),
            diffusion: DiffusionSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub gamma: f64,
    pub num_steps: usize,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Variance of the analytic denoiser's Gaussian prior.
    pub sigma2: f64,
    /// External denoiser speaking the line protocol on stdin/stdout.
    pub command: Option<Vec<String>>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let engine = DiffusionConfig::default();
        Self {
            gamma: engine.gamma,
            num_steps: engine.num_steps,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma2: 1.0,
            command: None,
        }
    }
}

impl DiffusionSection {
    pub fn engine(&self) -> DiffusionConfig {
        DiffusionConfig {
            gamma: self.gamma,
            num_steps: self.num_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateConfig {
    pub id: String,
    pub extractor: Extractor,
    #[serde(default)]
    pub size_rank: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub k: usize,
    pub normalize: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            k: swsa_core::knn::DEFAULT_K,
            normalize: false,
        }
    }
}

/// Which support ids form the kNN bank when scoring the synthetic set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticBank {
    /// Seed images only, so held-out normals are never matched against themselves.
    Seed,
    /// The whole support set.
    Support,
}

impl FromStr for SyntheticBank {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "seed" => Ok(Self::Seed),
            "support" => Ok(Self::Support),
            other => Err(format!("unknown bank {other:?}; expected seed or support")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub mode: TaskMode,
    pub strategies: Vec<String>,
    pub synthetic_bank: SyntheticBank,
    /// Sizes of the hardest-anomaly subsets for the rank analysis.
    pub hardest: Vec<usize>,
    pub alpha: f64,
    pub bonferroni_tests: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: TaskMode::OneVsRest,
            strategies: vec!["swsa".into(), "ground-truth".into()],
            synthetic_bank: SyntheticBank::Seed,
            hardest: Vec::new(),
            alpha: 0.05,
            bonferroni_tests: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvSection {
    pub enabled: bool,
    /// Candidate whose embeddings are compared; the first candidate when absent.
    pub candidate: Option<String>,
    pub runs: usize,
    pub k: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TvSection {
    fn default() -> Self {
        let d = swsa_core::tv::TvConfig::default();
        Self {
            enabled: false,
            candidate: None,
            runs: d.runs,
            k: d.k,
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

/// Parses a strategy name; `random` draws from the master seed.
pub fn parse_strategy(name: &str, master_seed: u64) -> std::result::Result<Strategy, String> {
    Ok(match name {
        "swsa" => Strategy::Swsa,
        "largest-model" => Strategy::LargestModel,
        "default-prompt" => Strategy::DefaultPrompt,
        "prompt-ensemble" => Strategy::PromptEnsemble,
        "random" => Strategy::Random { seed: master_seed },
        "ground-truth" => Strategy::GroundTruth,
        other => return Err(format!("unknown strategy {other:?}")),
    })
}

/// Environment variables that override config values.
pub const ENV_SEED: &str = "SWSA_MASTER_SEED";
pub const ENV_DATA: &str = "SWSA_DATA";
pub const ENV_OUT: &str = "SWSA_OUT";
pub const ENV_AUXILIARY: &str = "SWSA_AUXILIARY";

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            CliError::config(key, e.to_string().trim_end().to_string())
        })
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.data);
        resolve(&mut cfg.paths.out);
        if let Some(a) = cfg.paths.auxiliary.as_mut() {
            resolve(a);
        }
        Ok(cfg)
    }

    /// Applies `SWSA_*` environment overrides.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seed) = get(ENV_SEED) {
            self.master_seed = seed.parse().map_err(|_| {
                CliError::config(ENV_SEED, format!("{seed:?} is not an unsigned integer"))
            })?;
        }
        if let Some(p) = get(ENV_DATA) {
            self.paths.data = p.into();
        }
        if let Some(p) = get(ENV_OUT) {
            self.paths.out = p.into();
        }
        if let Some(p) = get(ENV_AUXILIARY) {
            self.paths.auxiliary = Some(p.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.paths.data.is_dir() {
            return Err(CliError::config(
                "paths.data",
                format!("{} is not a directory", self.paths.data.display()),
            ));
        }
        if !self.paths.data.join("support").is_dir() {
            return Err(CliError::config(
                "paths.data",
                format!("{} has no support/ directory", self.paths.data.display()),
            ));
        }
        if self.generator.kind == GeneratorKind::Auxiliary {
            match &self.paths.auxiliary {
                Some(p) if p.is_dir() => {}
                Some(p) => {
                    return Err(CliError::config(
                        "paths.auxiliary",
                        format!("{} is not a directory", p.display()),
                    ))
                }
                None => {
                    return Err(CliError::config(
                        "paths.auxiliary",
                        "required by the auxiliary generator",
                    ))
                }
            }
        }
        if self.candidates.is_empty() {
            return Err(CliError::config(
                "candidates",
                "at least one candidate is required",
            ));
        }
        let mut ids: Vec<&str> = self.candidates.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::config(
                "candidates.id",
                format!("duplicate id {:?}", w[0]),
            ));
        }
        for c in &self.candidates {
            if c.id.is_empty() || c.id.contains(['/', '\\']) {
                return Err(CliError::config(
                    "candidates.id",
                    format!("{:?} is not a valid file name", c.id),
                ));
            }
        }
        if self.generator.count == 0 {
            return Err(CliError::config("generator.count", "must be at least 1"));
        }
        if self.detector.k == 0 {
            return Err(CliError::config("detector.k", "must be at least 1"));
        }
        for s in &self.selection.strategies {
            let strategy = parse_strategy(s, self.master_seed)
                .map_err(|m| CliError::config("selection.strategies", m))?;
            if matches!(strategy, Strategy::DefaultPrompt | Strategy::PromptEnsemble) {
                return Err(CliError::config(
                    "selection.strategies",
                    format!("{s} applies to prompt selection, not model selection"),
                ));
            }
            if strategy == Strategy::LargestModel
                && self.candidates.iter().any(|c| c.size_rank.is_none())
            {
                return Err(CliError::config(
                    "candidates.size_rank",
                    "largest-model needs a size_rank on every candidate",
                ));
            }
        }
        if self.tv.enabled {
            if let Some(c) = &self.tv.candidate {
                if !self.candidates.iter().any(|x| &x.id == c) {
                    return Err(CliError::config(
                        "tv.candidate",
                        format!("unknown candidate {c:?}"),
                    ));
                }
            }
            if self.tv.runs == 0 {
                return Err(CliError::config("tv.runs", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.selection
            .strategies
            .iter()
            .map(|s| parse_strategy(s, self.master_seed).expect("validated"))
            .collect()
    }

    /// SHA-256 of the effective configuration, excluding the output directory.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.out = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}
