//! Image dataset layout and the built-in desk-scale dataset generator.
//!
//! A dataset root holds `support/<class>/<id>.png` and, for ground-truth
//! evaluation, `test/<class>/<id>.png`. Ids are file stems and must be unique
//! across the whole dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use swsa_core::model::RasterImage;
use swsa_core::rng::stream;

use crate::error::{CliError, Result};

/// PNG files directly inside `dir`, as `(stem, path)` sorted by stem.
pub fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    CliError::Invalid(format!("{}: non UTF-8 file name", path.display()))
                })?
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                out.push(name.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub support: BTreeMap<String, Vec<String>>,
    pub test: BTreeMap<String, Vec<String>>,
    paths: BTreeMap<String, PathBuf>,
}

impl Dataset {
    pub fn scan(root: &Path) -> Result<Self> {
        let mut paths = BTreeMap::new();
        let mut split = |name: &str| -> Result<BTreeMap<String, Vec<String>>> {
            let dir = root.join(name);
            let mut by_class = BTreeMap::new();
            if !dir.is_dir() {
                return Ok(by_class);
            }
            for class in subdirs(&dir)? {
                let mut ids = Vec::new();
                for (stem, path) in png_stems(&dir.join(&class))? {
                    if paths.insert(stem.clone(), path).is_some() {
                        return Err(CliError::Invalid(format!(
                            "image id {stem:?} appears twice under {}",
                            root.display()
                        )));
                    }
                    ids.push(stem);
                }
                by_class.insert(class, ids);
            }
            Ok(by_class)
        };
        let support = split("support")?;
        let test = split("test")?;
        if support.is_empty() {
            return Err(CliError::Invalid(format!(
                "{}: no support classes",
                root.display()
            )));
        }
        for class in test.keys() {
            if !support.contains_key(class) {
                return Err(CliError::Invalid(format!(
                    "test class {class:?} has no support images"
                )));
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            classes: support.keys().cloned().collect(),
            support,
            test,
            paths,
        })
    }

    pub fn has_test(&self) -> bool {
        !self.test.is_empty()
    }

    pub fn path(&self, id: &str) -> Result<&Path> {
        self.paths
            .get(id)
            .map(PathBuf::as_path)
            .ok_or_else(|| CliError::Invalid(format!("no image with id {id:?}")))
    }

    pub fn load(&self, id: &str) -> Result<RasterImage> {
        Ok(RasterImage::load_png(self.path(id)?)?)
    }

    /// Every image as `(id, path)`, sorted by id.
    pub fn images(&self) -> Vec<(String, PathBuf)> {
        self.paths
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn support_of(&self, class: &str) -> Result<&[String]> {
        self.support
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| CliError::Invalid(format!("unknown class {class:?}")))
    }
}

/// Parameters of the generated desk-scale dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskSpec {
    pub classes: usize,
    pub support: usize,
    pub test: usize,
    pub size: u32,
    /// Per-pixel Gaussian noise, in signed unit range.
    pub noise: f64,
    /// Amplitude of each later class's deviation from the first class's pattern.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            support: 20,
            test: 20,
            size: 16,
            noise: 0.05,
            separation: 0.3,
            seed: 0,
        }
    }
}

/// Smooth random field: a few random plane waves per channel.
fn wave_field<R: Rng>(size: u32, rng: &mut R) -> Vec<f64> {
    let waves: Vec<[f64; 4]> = (0..3 * 4)
        .map(|_| {
            [
                rng.random_range(0.15..0.8) * if rng.random() { 1.0 } else { -1.0 },
                rng.random_range(0.15..0.8),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.5..1.0),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity((size * size * 3) as usize);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let v: f64 = waves[c * 4..c * 4 + 4]
                    .iter()
                    .map(|w| w[3] * (w[0] * f64::from(x) + w[1] * f64::from(y) + w[2]).sin())
                    .sum();
                out.push(v / 4.0);
            }
        }
    }
    out
}

pub fn class_name(i: usize) -> String {
    format!("class{i}")
}

/// Writes `support/` and `test/` splits of a structured multi-class dataset.
pub fn write_desk_dataset(root: &Path, spec: &DeskSpec) -> Result<()> {
    if spec.classes < 2 || spec.support < 2 || spec.size < 4 {
        return Err(CliError::Invalid(
            "desk dataset needs >= 2 classes, >= 2 support images and size >= 4".into(),
        ));
    }
    let noise =
        Normal::new(0.0, spec.noise).map_err(|e| CliError::Invalid(format!("noise: {e}")))?;
    let base = wave_field(spec.size, &mut stream(spec.seed, "desk/base"));
    for c in 0..spec.classes {
        let class = class_name(c);
        let pattern: Vec<f64> = if c == 0 {
            base.clone()
        } else {
            let dev = wave_field(spec.size, &mut stream(spec.seed, &format!("desk/{class}")));
            base.iter()
                .zip(dev)
                .map(|(b, d)| b + spec.separation * d)
                .collect()
        };
        for (split, count, tag) in [("support", spec.support, 's'), ("test", spec.test, 't')] {
            let dir = root.join(split).join(&class);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            for i in 0..count {
                let id = format!("{class}_{tag}{i:03}");
                let mut rng = stream(spec.seed, &format!("desk/{id}"));
                let values: Vec<f64> = pattern.iter().map(|p| p + noise.sample(&mut rng)).collect();
                RasterImage::from_signed_unit(spec.size, spec.size, &values)?
                    .save_png(&dir.join(format!("{id}.png")))?;
            }
        }
    }
    Ok(())
}
