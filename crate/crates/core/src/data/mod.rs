//! Synthetic datasets, patch extraction and train/test split protocols.

mod patches;
mod split;
mod tabular;
mod texture;

pub use patches::{extract_patch_grid, extract_patches, window_offsets, PATCH_STD_FLOOR};
pub use split::{make_split, Split, SplitMode, SplitSpec, MAX_CONTAMINATION};
pub use tabular::{gen_tabular, AnomalyClass, Gaussian, TabularGenConfig};
pub use texture::{
    gen_texture_images, plant_defect, render_background, DefectShape, DefectSpec,
    TextureGenConfig, TextureImage,
};

use crate::bag::Bag;
use crate::error::Result;

/// Generated texture images turned into patch bags using the config's
/// patch size and stride.
pub fn texture_bags(cfg: &TextureGenConfig) -> Result<Vec<Bag>> {
    gen_texture_images(cfg)?
        .iter()
        .map(|img| extract_patches(img, cfg.patch, cfg.stride))
        .collect()
}
