use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bag::{Bag, PatchGeometry};
use crate::error::{Error, Result};
use crate::io::pgm::{mask_from_pgm, read_pgm, write_mask_pgm};

/// One line of a bag file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagRecord {
    pub id: u64,
    pub y: u8,
    pub class_id: Option<u32>,
    pub instances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PatchGeometry>,
    /// Mask file, relative to the directory holding the bag file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl BagRecord {
    fn from_bag(bag: &Bag, mask_path: Option<String>) -> Self {
        Self {
            id: bag.id,
            y: bag.label,
            class_id: bag.class_id,
            instances: bag.instances.clone(),
            geometry: bag.geometry.clone(),
            mask_path,
        }
    }
}

/// Serializes bags one JSON object per line. Masks are not embedded.
pub fn bags_to_jsonl(bags: &[Bag]) -> Result<String> {
    let mut out = String::new();
    for bag in bags {
        let line = serde_json::to_string(&BagRecord::from_bag(bag, None))
            .map_err(|e| Error::Contract(format!("bag {} is not serializable: {e}", bag.id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSONL text into records. Blank lines are skipped; errors report
/// the byte offset where the offending line starts or where JSON parsing
/// failed.
pub fn parse_bags(text: &str) -> Result<Vec<BagRecord>> {
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len() as u64;
        let body = line.trim_end_matches(['\n', '\r']);
        if body.trim().is_empty() {
            continue;
        }
        let rec: BagRecord = serde_json::from_str(body).map_err(|e| {
            Error::parse(start + e.column().saturating_sub(1) as u64, e.to_string())
        })?;
        records.push(rec);
    }
    Ok(records)
}

fn mask_dir(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("bags");
    format!("{stem}_masks")
}

/// Writes a bag file. Masks go to `<stem>_masks/<id>.pgm` beside it.
pub fn write_bags(path: &Path, bags: &[Bag]) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = mask_dir(path);
    let mut out = String::new();
    for bag in bags {
        let mask_path = match &bag.mask {
            Some(mask) => {
                let rel = format!("{dir}/{}.pgm", bag.id);
                write_mask_pgm(&base.join(&rel), mask)?;
                Some(rel)
            }
            None => None,
        };
        let line = serde_json::to_string(&BagRecord::from_bag(bag, mask_path))
            .map_err(|e| Error::Contract(format!("bag {} is not serializable: {e}", bag.id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    super::write_file(path, out.as_bytes())
}

/// Reads a bag file written by [`write_bags`], loading referenced masks.
pub fn read_bags(path: &Path) -> Result<Vec<Bag>> {
    let text = fs::read_to_string(path)?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut bags = Vec::new();
    let mut offset = 0u64;
    let mut line_starts = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            line_starts.push(offset);
        }
        offset += line.len() as u64;
    }
    for (rec, start) in parse_bags(&text)?.into_iter().zip(line_starts) {
        let mask = match &rec.mask_path {
            Some(rel) => Some(mask_from_pgm(&read_pgm(&base.join(rel))?)?),
            None => None,
        };
        let bag = Bag {
            id: rec.id,
            label: rec.y,
            class_id: rec.class_id,
            instances: rec.instances,
            geometry: rec.geometry,
            mask,
        };
        bag.validate().map_err(|e| Error::parse(start, e.to_string()))?;
        bags.push(bag);
    }
    Ok(bags)
}
