//! Domain types and the on-disk formats shared with the extraction sidecar.
//!
//! * EBANK: `"EBNK"`, version byte `0x01`, little-endian `u32` header length,
//!   a compact JSON header, then `n * dim` little-endian `f32` values.
//! * Scores: UTF-8 CSV with header `id,score,label`.
//! * Images: 8-bit RGB PNG.

mod bank;
mod ebank;
mod image;
mod scores;
mod types;

pub use bank::EmbeddingBank;
pub use ebank::{
    decode_ebank, encode_ebank, read_ebank, read_ebank_file, write_ebank, write_ebank_file,
    EBANK_MAGIC, EBANK_VERSION,
};
pub use image::RasterImage;
pub use scores::{
    read_scores, read_scores_file, read_validation_set, read_validation_set_file, write_scores,
    write_scores_file, write_validation_set, write_validation_set_file,
};
pub(crate) use types::check_unique_candidates;
pub use types::{CandidateDescriptor, CandidateKind, ScoredSet, SyntheticValidationSet};

use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so readers
/// never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| crate::Error::invalid(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    std::fs::create_dir_all(dir).map_err(crate::Error::io_at(dir))?;
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let written = std::fs::File::create(&tmp).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    written
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            crate::Error::io_at(path)(e)
        })
}
