//! On-disk formats: JSONL bags, binary checkpoints, PGM images and CSV
//! tables.

mod checkpoint;
mod jsonl;
mod pgm;
mod tables;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use jsonl::{bags_to_jsonl, parse_bags, read_bags, write_bags, BagRecord};
pub use pgm::{mask_from_pgm, read_pgm, write_mask_pgm, write_saliency_pgm, Pgm};
pub use tables::{history_csv, saliency_csv};

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
