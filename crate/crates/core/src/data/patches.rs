use crate::bag::{Bag, PatchGeometry};
use crate::data::texture::TextureImage;
use crate::error::{Error, Result};

/// Standard-deviation floor used when standardizing a flat patch.
pub const PATCH_STD_FLOOR: f64 = 1e-6;

/// Window offsets along one axis: multiples of `stride`, with the last
/// window clamped to the border so every pixel is covered when
/// `stride <= patch`.
pub fn window_offsets(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("stride 0 produces no windows".into()));
    }
    if patch == 0 || patch > extent {
        return Err(Error::Config(format!(
            "patch size {patch} does not fit an extent of {extent}"
        )));
    }
    let span = extent - patch;
    let count = span.div_ceil(stride) + 1;
    Ok((0..count).map(|i| (i * stride).min(span)).collect())
}

impl PatchGeometry {
    /// Offsets of grid row/column `i` under the clamped-window rule.
    pub fn offset(&self, i: usize, extent: usize) -> usize {
        (i * self.stride).min(extent - self.patch)
    }

    /// Top-left pixel of patch `index` in row-major grid order.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        let r = index / self.grid_cols;
        let c = index % self.grid_cols;
        (self.offset(r, self.height), self.offset(c, self.width))
    }

    /// Top-left pixel of every patch, row-major.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_patches());
        for r in 0..self.grid_rows {
            for c in 0..self.grid_cols {
                out.push((self.offset(r, self.height), self.offset(c, self.width)));
            }
        }
        out
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(PATCH_STD_FLOOR);
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// Cuts a row-major `height x width` image into sliding `patch x patch`
/// windows. Each patch is flattened row-major and standardized to mean 0,
/// std 1.
pub fn extract_patch_grid(
    pixels: &[f64],
    height: usize,
    width: usize,
    patch: usize,
    stride: usize,
) -> Result<(Vec<Vec<f64>>, PatchGeometry)> {
    if pixels.len() != height * width {
        return Err(Error::dim("image pixels", height * width, pixels.len()));
    }
    let rows = window_offsets(height, patch, stride)?;
    let cols = window_offsets(width, patch, stride)?;
    let mut instances = Vec::with_capacity(rows.len() * cols.len());
    for &y0 in &rows {
        for &x0 in &cols {
            let mut v = Vec::with_capacity(patch * patch);
            for dy in 0..patch {
                let start = (y0 + dy) * width + x0;
                v.extend_from_slice(&pixels[start..start + patch]);
            }
            standardize(&mut v);
            instances.push(v);
        }
    }
    let geometry = PatchGeometry {
        image_id: 0,
        height,
        width,
        patch,
        stride,
        grid_rows: rows.len(),
        grid_cols: cols.len(),
    };
    Ok((instances, geometry))
}

/// The bag of standardized patches of a generated image, carrying its
/// label, class, mask and grid geometry.
pub fn extract_patches(image: &TextureImage, patch: usize, stride: usize) -> Result<Bag> {
    let (instances, mut geometry) =
        extract_patch_grid(&image.pixels, image.size, image.size, patch, stride)?;
    geometry.image_id = image.id;
    let mut bag = Bag::new(image.id, image.label, image.class_id, instances)?;
    bag.geometry = Some(geometry);
    bag.mask = image.mask.clone();
    bag.validate()?;
    Ok(bag)
}
