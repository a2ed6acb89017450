//! Synthetic textured images with planted defects and exact pixel masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::Mask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectShape {
    /// Filled disk.
    Blob,
    /// Thin straight line segment.
    Scratch,
    /// Axis-aligned stripe.
    Band,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub shape: DefectShape,
    /// Added to every defect pixel.
    pub intensity_shift: f64,
    /// Inclusive range of defect pixel counts.
    pub min_pixels: usize,
    pub max_pixels: usize,
}

/// The defaults describe one texture: every image shares the grating
/// frequency and orientation and differs only in phase and noise. Widen the
/// ranges to mix textures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureGenConfig {
    pub size: usize,
    /// Sinusoid grating amplitude around a 0.5 base level.
    pub grating_amplitude: f64,
    /// Grating frequency range in cycles per image side.
    pub min_cycles: f64,
    pub max_cycles: f64,
    /// Grating orientation range in radians.
    pub min_angle: f64,
    pub max_angle: f64,
    pub noise_std: f64,
    pub defects: Vec<DefectSpec>,
    pub n_normal: usize,
    /// Anomalous images generated per defect type.
    pub n_per_defect: usize,
    pub patch: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for TextureGenConfig {
    fn default() -> Self {
        Self {
            size: 32,
            grating_amplitude: 0.25,
            min_cycles: 3.0,
            max_cycles: 3.0,
            min_angle: std::f64::consts::FRAC_PI_4,
            max_angle: std::f64::consts::FRAC_PI_4,
            noise_std: 0.05,
            defects: vec![
                DefectSpec {
                    shape: DefectShape::Blob,
                    intensity_shift: 0.8,
                    min_pixels: 20,
                    max_pixels: 50,
                },
                DefectSpec {
                    shape: DefectShape::Scratch,
                    intensity_shift: -0.8,
                    min_pixels: 16,
                    max_pixels: 40,
                },
                DefectSpec {
                    shape: DefectShape::Band,
                    intensity_shift: 0.6,
                    min_pixels: 24,
                    max_pixels: 60,
                },
            ],
            n_normal: 300,
            n_per_defect: 40,
            patch: 8,
            stride: 4,
            seed: 0,
        }
    }
}

impl TextureGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.patch == 0 || self.patch > self.size {
            return Err(Error::Config(format!(
                "patch size {} must be in 1..={}",
                self.patch, self.size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.min_cycles > 0.0 && self.min_cycles <= self.max_cycles) {
            return Err(Error::Config("grating cycle range is empty".into()));
        }
        if !(self.min_angle <= self.max_angle) {
            return Err(Error::Config("grating angle range is empty".into()));
        }
        for (i, d) in self.defects.iter().enumerate() {
            if d.min_pixels == 0 || d.min_pixels > d.max_pixels {
                return Err(Error::Config(format!("defect {i} has an empty size range")));
            }
            if d.min_pixels > self.size * self.size {
                return Err(Error::Config(format!(
                    "defect {i} needs at least {} pixels but the image has {}",
                    d.min_pixels,
                    self.size * self.size
                )));
            }
        }
        Ok(())
    }
}

/// A square grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureImage {
    pub id: u64,
    pub size: usize,
    pub pixels: Vec<f64>,
    pub label: u8,
    /// Defect type index for anomalies.
    pub class_id: Option<u32>,
    pub mask: Option<Mask>,
}

/// Grating background plus white noise. Frequency and orientation are drawn
/// from the configured ranges, the phase uniformly.
pub fn render_background<R: Rng + ?Sized>(cfg: &TextureGenConfig, rng: &mut R) -> Vec<f64> {
    let n = cfg.size;
    let cycles = rng.random_range(cfg.min_cycles..=cfg.max_cycles);
    let angle = rng.random_range(cfg.min_angle..=cfg.max_angle);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let (fx, fy) = (
        cycles * angle.cos() / n as f64,
        cycles * angle.sin() / n as f64,
    );
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase;
            let z: f64 = StandardNormal.sample(rng);
            px.push(0.5 + cfg.grating_amplitude * arg.sin() + cfg.noise_std * z);
        }
    }
    px
}

fn rasterize<R: Rng + ?Sized>(shape: DefectShape, size: usize, target: usize, rng: &mut R) -> Vec<u8> {
    let n = size as f64;
    let mut m = vec![0u8; size * size];
    match shape {
        DefectShape::Blob => {
            let r = (target as f64 / std::f64::consts::PI).sqrt();
            let cx = rng.random_range(0.0..n);
            let cy = rng.random_range(0.0..n);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        m[y * size + x] = 1;
                    }
                }
            }
        }
        DefectShape::Scratch => {
            let width = 1.0;
            let len = target as f64 / width;
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (ux, uy) = (angle.cos(), angle.sin());
            let cx = rng.random_range(0.0..n);
            let cy = rng.random_range(0.0..n);
            for y in 0..size {
                for x in 0..size {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let along = dx * ux + dy * uy;
                    let across = -dx * uy + dy * ux;
                    if along.abs() <= len / 2.0 && across.abs() <= width / 2.0 + 0.25 {
                        m[y * size + x] = 1;
                    }
                }
            }
        }
        DefectShape::Band => {
            let thickness = rng.random_range(2..=3usize);
            let len = (target / thickness).clamp(1, size);
            let horizontal = rng.random_bool(0.5);
            let across0 = rng.random_range(0..=size - thickness);
            let along0 = rng.random_range(0..=size - len);
            for t in 0..thickness {
                for l in 0..len {
                    let (y, x) = if horizontal {
                        (across0 + t, along0 + l)
                    } else {
                        (along0 + l, across0 + t)
                    };
                    m[y * size + x] = 1;
                }
            }
        }
    }
    m
}

/// Adds one defect of type `spec` to `pixels`. Shapes are re-drawn until the
/// mask pixel count falls inside the configured range.
pub fn plant_defect<R: Rng + ?Sized>(
    pixels: &mut [f64],
    size: usize,
    spec: &DefectSpec,
    rng: &mut R,
) -> Result<Mask> {
    if spec.min_pixels > size * size || spec.min_pixels > spec.max_pixels {
        return Err(Error::Config(format!(
            "defect of {}..={} pixels does not fit a {size}x{size} image",
            spec.min_pixels, spec.max_pixels
        )));
    }
    for _ in 0..10_000 {
        let target = rng.random_range(spec.min_pixels..=spec.max_pixels);
        let m = rasterize(spec.shape, size, target, rng);
        let count = m.iter().filter(|&&v| v == 1).count();
        if (spec.min_pixels..=spec.max_pixels).contains(&count) {
            for (p, &on) in pixels.iter_mut().zip(&m) {
                if on == 1 {
                    *p += spec.intensity_shift;
                }
            }
            return Mask::new(size, size, m);
        }
    }
    Err(Error::Config(format!(
        "could not place a {:?} defect of {}..={} pixels",
        spec.shape, spec.min_pixels, spec.max_pixels
    )))
}

/// `n_normal` defect-free images (ids `0..`), then `n_per_defect` anomalous
/// images for each defect type in order.
pub fn gen_texture_images(cfg: &TextureGenConfig) -> Result<Vec<TextureImage>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_normal + cfg.n_per_defect * cfg.defects.len());
    for _ in 0..cfg.n_normal {
        out.push(TextureImage {
            id: out.len() as u64,
            size: cfg.size,
            pixels: render_background(cfg, &mut rng),
            label: 0,
            class_id: None,
            mask: None,
        });
    }
    for (c, spec) in cfg.defects.iter().enumerate() {
        for _ in 0..cfg.n_per_defect {
            let mut pixels = render_background(cfg, &mut rng);
            let mask = plant_defect(&mut pixels, cfg.size, spec, &mut rng)?;
            out.push(TextureImage {
                id: out.len() as u64,
                size: cfg.size,
                pixels,
                label: 1,
                class_id: Some(c as u32),
                mask: Some(mask),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_leaves_the_background() {
        let cfg = TextureGenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = render_background(&cfg, &mut rng);
        let mut img = bg.clone();
        let spec = DefectSpec { intensity_shift: 0.0, ..cfg.defects[0].clone() };
        let mask = plant_defect(&mut img, cfg.size, &spec, &mut rng).unwrap();
        assert_eq!(img, bg);
        assert!(mask.count() >= spec.min_pixels);
    }

    #[test]
    fn masks_respect_size_ranges() {
        let cfg = TextureGenConfig { n_normal: 5, n_per_defect: 30, ..Default::default() };
        let imgs = gen_texture_images(&cfg).unwrap();
        assert_eq!(imgs.len(), 5 + 90);
        for img in &imgs {
            assert_eq!(img.pixels.len(), 32 * 32);
            match (&img.mask, img.class_id) {
                (Some(m), Some(c)) => {
                    let d = &cfg.defects[c as usize];
                    assert!((d.min_pixels..=d.max_pixels).contains(&m.count()), "{}", m.count());
                }
                (None, None) => assert_eq!(img.label, 0),
                _ => panic!("mask and class must agree"),
            }
        }
    }

    #[test]
    fn defect_contrast_survives_the_background() {
        // averaged over many images the grating contributes nothing, so the
        // in-mask excess is the planted shift up to noise
        let cfg = TextureGenConfig { n_normal: 0, n_per_defect: 100, ..Default::default() };
        let imgs = gen_texture_images(&cfg).unwrap();
        for (c, spec) in cfg.defects.iter().enumerate() {
            let mut diff = 0.0;
            let mut n = 0.0;
            for img in imgs.iter().filter(|i| i.class_id == Some(c as u32)) {
                let m = img.mask.as_ref().unwrap();
                let (mut sin, mut cin, mut sout, mut cout) = (0.0, 0.0, 0.0, 0.0);
                for (p, &on) in img.pixels.iter().zip(&m.pixels) {
                    if on == 1 {
                        sin += p;
                        cin += 1.0;
                    } else {
                        sout += p;
                        cout += 1.0;
                    }
                }
                diff += sin / cin - sout / cout;
                n += 1.0;
            }
            let mean_diff = diff / n;
            let shift = spec.intensity_shift;
            // signed: the contrast has the sign of the shift
            assert!(mean_diff * shift.signum() >= shift.abs() - cfg.noise_std, "{c}: {mean_diff}");
        }
    }

    #[test]
    fn oversized_defect_is_a_config_error() {
        let mut cfg = TextureGenConfig::default();
        cfg.defects[0].min_pixels = 2000;
        cfg.defects[0].max_pixels = 3000;
        assert!(matches!(gen_texture_images(&cfg), Err(Error::Config(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut px = vec![0.0; 16];
        assert!(plant_defect(&mut px, 4, &cfg.defects[0], &mut rng).is_err());
    }

    #[test]
    fn deterministic() {
        let cfg = TextureGenConfig { n_normal: 3, n_per_defect: 2, ..Default::default() };
        assert_eq!(gen_texture_images(&cfg).unwrap(), gen_texture_images(&cfg).unwrap());
    }
}
