//! Synthetic anomalies by copying a random rectangle of an image onto a
//! different location of the same image.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::RasterImage;
use crate::{rng, Error, Result};

/// Patch geometry. Area bounds are fractions of the image area; the aspect ratio
/// (width / height) is drawn log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutPasteParams {
    pub area_ratio: (f64, f64),
    pub aspect_ratio: (f64, f64),
    pub max_resample_attempts: u32,
}

impl Default for CutPasteParams {
    fn default() -> Self {
        Self {
            area_ratio: (0.02, 0.15),
            aspect_ratio: (0.3, 3.3),
            max_resample_attempts: 16,
        }
    }
}

impl CutPasteParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area_ratio;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "area ratio range ({lo}, {hi}) must satisfy 0 < lo < hi <= 1"
            )));
        }
        let (alo, ahi) = self.aspect_ratio;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return Err(Error::invalid(format!(
                "aspect ratio range ({alo}, {ahi}) must be positive and ordered"
            )));
        }
        if self.max_resample_attempts == 0 {
            return Err(Error::invalid("max_resample_attempts must be at least 1"));
        }
        Ok(())
    }

    /// Whether the patch dimensions drawn for `w` x `h` satisfy the configured ranges.
    pub fn admits(&self, image_width: u32, image_height: u32, w: u32, h: u32) -> bool {
        let area = f64::from(image_width) * f64::from(image_height);
        let patch = f64::from(w) * f64::from(h);
        let aspect = f64::from(w) / f64::from(h);
        w >= 1
            && h >= 1
            && w <= image_width
            && h <= image_height
            && patch >= self.area_ratio.0 * area
            && patch <= self.area_ratio.1 * area
            && aspect >= self.aspect_ratio.0
            && aspect <= self.aspect_ratio.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// Where a patch came from and where it went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source: Rect,
    pub destination: Rect,
    /// The copied pixels equal the pixels they replaced, so the output equals the input.
    pub identical_content: bool,
    pub attempts: u32,
}

/// Applies one cut-and-paste to `image`.
pub fn cutpaste<R: Rng + ?Sized>(
    image: &RasterImage,
    params: &CutPasteParams,
    rng: &mut R,
) -> Result<(RasterImage, PatchRecord)> {
    params.validate()?;
    let (iw, ih) = (image.width(), image.height());
    let area = f64::from(iw) * f64::from(ih);
    let min_area = params.area_ratio.0 * area;
    let min_w = (min_area * params.aspect_ratio.0).sqrt();
    let min_h = (min_area / params.aspect_ratio.1).sqrt();
    if min_w < 1.0 || min_h < 1.0 {
        return Err(Error::invalid(format!(
            "image {iw}x{ih} is too small for the minimum patch ({min_w:.2}x{min_h:.2})"
        )));
    }
    let (log_lo, log_hi) = (params.aspect_ratio.0.ln(), params.aspect_ratio.1.ln());
    for attempt in 1..=params.max_resample_attempts {
        let patch_area = rng.random_range(params.area_ratio.0..=params.area_ratio.1) * area;
        let aspect = if log_lo < log_hi {
            rng.random_range(log_lo..log_hi).exp()
        } else {
            params.aspect_ratio.0
        };
        let w = (patch_area * aspect).sqrt().round() as u32;
        let h = (patch_area / aspect).sqrt().round() as u32;
        if !params.admits(iw, ih, w, h) {
            continue;
        }
        let source = Rect {
            x: rng.random_range(0..=iw - w),
            y: rng.random_range(0..=ih - h),
            width: w,
            height: h,
        };
        let destination = Rect {
            x: rng.random_range(0..=iw - w),
            y: rng.random_range(0..=ih - h),
            width: w,
            height: h,
        };
        if (source.x, source.y) == (destination.x, destination.y) {
            continue;
        }
        let (out, identical_content) = paste(image, source, destination);
        return Ok((
            out,
            PatchRecord {
                source,
                destination,
                identical_content,
                attempts: attempt,
            },
        ));
    }
    Err(Error::invalid(format!(
        "cutpaste resample attempts exhausted after {} tries on a {iw}x{ih} image",
        params.max_resample_attempts
    )))
}

fn paste(image: &RasterImage, source: Rect, destination: Rect) -> (RasterImage, bool) {
    let mut out = image.clone();
    let mut identical = true;
    for dy in 0..source.height {
        for dx in 0..source.width {
            let px = image.pixel(source.x + dx, source.y + dy);
            let (tx, ty) = (destination.x + dx, destination.y + dy);
            identical &= image.pixel(tx, ty) == px;
            out.set_pixel(tx, ty, px);
        }
    }
    (out, identical)
}

/// One generated anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPasteSample {
    pub id: String,
    pub seed_id: String,
    pub image: RasterImage,
    pub patch: PatchRecord,
}

/// Emits exactly `count` anomalies, cycling through `seeds` in order. Output `i`
/// uses the stream `(master_seed, "{tag}/cutpaste/{i}")`, so results do not depend
/// on how the work is scheduled.
pub fn generate_cutpaste_set(
    seeds: &[(String, RasterImage)],
    count: usize,
    params: &CutPasteParams,
    master_seed: u64,
    tag: &str,
) -> Result<Vec<CutPasteSample>> {
    if count == 0 {
        return Err(Error::invalid("cutpaste count must be at least 1"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("cutpaste needs at least one seed image"));
    }
    params.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (seed_id, image) = &seeds[i % seeds.len()];
            let mut rng = rng::stream(master_seed, &format!("{tag}/cutpaste/{i}"));
            let (image, patch) = cutpaste(image, params, &mut rng)?;
            Ok(CutPasteSample {
                id: format!("cutpaste_{i:04}_{seed_id}"),
                seed_id: seed_id.clone(),
                image,
                patch,
            })
        })
        .collect()
}
