//! File formats and external data.

pub mod checkpoint;
pub mod pfm;
pub mod scene;
pub mod spft;

use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_into, save_checkpoint};
pub use pfm::{decode_pfm, encode_pfm, load_pfm, save_pfm};
pub use scene::{ingest_dir, ingest_sample, write_scene, IngestReport};
pub use spft::{Container, Entry, EntryData};

pub(crate) fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let p = path.as_ref();
    std::fs::read(p).map_err(|e| Error::io(p, e))
}

/// Writes via a sibling temp file and a rename, so readers never see a
/// partial file.
pub(crate) fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let p = path.as_ref();
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = p.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, p).map_err(|e| Error::io(p, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let p = path.as_ref();
    std::fs::read_to_string(p).map_err(|e| Error::io(p, e))
}
