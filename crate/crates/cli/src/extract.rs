//! Feature extractors: two built-in pixel extractors and external commands.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swsa_core::model::{read_ebank_file, EmbeddingBank, RasterImage};
use swsa_core::rng::stream;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Extractor {
    /// Pixels scaled to `[-1, 1]`, flattened row-major.
    Identity,
    /// Identity features plus Gaussian noise that is fixed per image content.
    Noisy {
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `argv` with `{images}` replaced by a directory of PNGs and `{output}` by
    /// the EBANK path to write; ids are file stems.
    Command { argv: Vec<String> },
}

impl Extractor {
    /// `identity`, `noisy:SIGMA[:SEED]`.
    pub fn parse_builtin(spec: &str) -> std::result::Result<Self, String> {
        let mut parts = spec.split(':');
        match parts.next() {
            Some("identity") if parts.next().is_none() => Ok(Extractor::Identity),
            Some("noisy") => {
                let sigma = parts
                    .next()
                    .ok_or("noisy needs a sigma, e.g. noisy:0.3")?
                    .parse()
                    .map_err(|_| format!("bad sigma in {spec:?}"))?;
                let seed = match parts.next() {
                    Some(s) => s.parse().map_err(|_| format!("bad seed in {spec:?}"))?,
                    None => 0,
                };
                Ok(Extractor::Noisy { sigma, seed })
            }
            _ => Err(format!(
                "unknown extractor {spec:?}; expected identity or noisy:SIGMA[:SEED]"
            )),
        }
    }

    fn features(&self, image: &RasterImage) -> Vec<f32> {
        let base = image.to_signed_unit();
        match self {
            Extractor::Noisy { sigma, seed } => {
                let digest = Sha256::digest(image.pixels());
                let key = hex::encode(&digest[..8]);
                let mut rng = stream(*seed, &format!("noisy/{key}"));
                base.iter()
                    .map(|&v| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        (v + sigma * e) as f32
                    })
                    .collect()
            }
            _ => base.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Embeds `images` (`(id, path)` pairs) into a bank whose rows follow the
    /// input order. `staging` is a scratch directory for external commands.
    pub fn extract(
        &self,
        name: &str,
        images: &[(String, PathBuf)],
        staging: &Path,
    ) -> Result<EmbeddingBank> {
        if let Extractor::Command { argv } = self {
            return run_command(argv, name, images, staging);
        }
        let rows = images
            .par_iter()
            .map(|(_, path)| Ok(self.features(&RasterImage::load_png(path)?)))
            .collect::<Result<Vec<Vec<f32>>>>()?;
        let dim = rows.first().map_or(1, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(CliError::Invalid(format!(
                "{}: image size differs from the first image ({} vs {dim} features)",
                images[i].0,
                r.len()
            )));
        }
        let ids = images.iter().map(|(id, _)| id.clone()).collect();
        Ok(EmbeddingBank::from_rows(name, dim, ids, &rows, None)?)
    }
}

fn run_command(
    argv: &[String],
    name: &str,
    images: &[(String, PathBuf)],
    staging: &Path,
) -> Result<EmbeddingBank> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| CliError::config("extractor.argv", "empty command"))?;
    let input = staging.join(format!("{name}-images"));
    if input.exists() {
        std::fs::remove_dir_all(&input).map_err(|e| CliError::io(&input, e))?;
    }
    std::fs::create_dir_all(&input).map_err(|e| CliError::io(&input, e))?;
    for (id, path) in images {
        let dest = input.join(format!("{id}.png"));
        std::fs::copy(path, &dest).map_err(|e| CliError::io(&dest, e))?;
    }
    let output = staging.join(format!("{name}.raw.ebank"));
    let fill = |a: &String| {
        a.replace("{images}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy())
    };
    let status = Command::new(program)
        .args(args.iter().map(fill))
        .status()
        .map_err(|e| CliError::Invalid(format!("extractor {name}: cannot run {program:?}: {e}")))?;
    if !status.success() {
        return Err(CliError::Invalid(format!(
            "extractor {name}: {program:?} exited with {status}"
        )));
    }
    let raw = read_ebank_file(&output)?;
    let ids: Vec<&str> = images.iter().map(|(id, _)| id.as_str()).collect();
    let bank = raw.select(name, &ids)?;
    std::fs::remove_dir_all(&input).map_err(|e| CliError::io(&input, e))?;
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_specs() {
        assert_eq!(
            Extractor::parse_builtin("identity").unwrap(),
            Extractor::Identity
        );
        assert_eq!(
            Extractor::parse_builtin("noisy:0.5:9").unwrap(),
            Extractor::Noisy {
                sigma: 0.5,
                seed: 9
            }
        );
        assert!(Extractor::parse_builtin("noisy").is_err());
        assert!(Extractor::parse_builtin("resnet").is_err());
    }

    #[test]
    fn noise_is_keyed_by_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = RasterImage::filled(2, 2, [10, 20, 30]).unwrap();
        let b = RasterImage::filled(2, 2, [10, 20, 31]).unwrap();
        let paths: Vec<(String, PathBuf)> = [("a", &a), ("a2", &a), ("b", &b)]
            .iter()
            .map(|(id, img)| {
                let p = dir.path().join(format!("{id}.png"));
                img.save_png(&p).unwrap();
                (id.to_string(), p)
            })
            .collect();
        let noisy = Extractor::Noisy {
            sigma: 0.3,
            seed: 1,
        };
        let bank = noisy.extract("n", &paths, dir.path()).unwrap();
        assert_eq!(bank.dim(), 12);
        assert_eq!(bank.row(0), bank.row(1));
        assert_ne!(bank.row(0), bank.row(2));
        let ident = Extractor::Identity
            .extract("i", &paths, dir.path())
            .unwrap();
        assert_eq!(ident.row(0)[0], (10.0f64 / 127.5 - 1.0) as f32);
    }
}
