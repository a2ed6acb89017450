use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a bag's patches came from: the sliding-window grid over an image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchGeometry {
    pub fn n_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

/// Binary per-pixel ground truth, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dim("mask pixels", width * height, pixels.len()));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::Contract("mask pixels must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }
}

/// One sample: an ordered set of instance vectors sharing a single label.
/// Tabular rows are single-instance bags; images are bags of patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: u64,
    pub label: u8,
    /// Anomaly class for anomalies, `None` for normal samples.
    pub class_id: Option<u32>,
    pub instances: Vec<Vec<f64>>,
    pub geometry: Option<PatchGeometry>,
    pub mask: Option<Mask>,
}

impl Bag {
    pub fn new(id: u64, label: u8, class_id: Option<u32>, instances: Vec<Vec<f64>>) -> Result<Self> {
        let bag = Self {
            id,
            label,
            class_id,
            instances,
            geometry: None,
            mask: None,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .instances
            .first()
            .ok_or_else(|| Error::Contract(format!("bag {} has no instances", self.id)))?;
        let d = first.len();
        if d == 0 {
            return Err(Error::Contract(format!("bag {} has empty instances", self.id)));
        }
        if let Some((j, bad)) = self.instances.iter().enumerate().find(|(_, x)| x.len() != d) {
            return Err(Error::dim(
                format!("bag {} instance {j}", self.id),
                d,
                bad.len(),
            ));
        }
        if self.label > 1 {
            return Err(Error::Contract(format!(
                "bag {} label must be 0 or 1, got {}",
                self.id, self.label
            )));
        }
        if let Some(g) = &self.geometry {
            if g.n_patches() != self.instances.len() {
                return Err(Error::dim(
                    format!("bag {} patch grid", self.id),
                    g.n_patches(),
                    self.instances.len(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.instances[0].len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_anomaly(&self) -> bool {
        self.label == 1
    }
}
