//! Gradient-based anomaly localization.
//!
//! The saliency of a pixel is the magnitude of the derivative of the bag's
//! top-K score with respect to the standardized patch values covering it,
//! averaged over the covering patches and smoothed by a Gaussian filter.

use serde::{Deserialize, Serialize};

use crate::autodiff::{record_layers, Tape, Tensor};
use crate::bag::{Bag, Mask, PatchGeometry};
use crate::error::{Error, Result};
use crate::eval::auc_roc;
use crate::network::NetworkParams;

/// Blur width at a 128-pixel image side.
pub const REFERENCE_SIGMA: f64 = 4.0;
const REFERENCE_SIDE: f64 = 128.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub image_id: u64,
    pub width: usize,
    pub height: usize,
    /// Row-major, all entries >= 0.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (i / self.width, i % self.width)
    }

    /// Mean saliency inside and outside a mask.
    pub fn mask_means(&self, mask: &Mask) -> Result<(f64, f64)> {
        check_mask(self, mask)?;
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in self.values.iter().zip(&mask.pixels) {
            if m == 1 {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        if ni == 0 || no == 0 {
            return Err(Error::Contract("mask must contain both classes".into()));
        }
        Ok((si / ni as f64, so / no as f64))
    }
}

/// Absolute input gradients of a bag's top-K score, one vector per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGradients {
    pub phi_k: f64,
    pub selected: Vec<usize>,
    pub magnitudes: Vec<Vec<f64>>,
}

/// `|d phi_K / d x_ij|` for every instance feature; zero outside the top-K
/// selection. Only image bags (with patch geometry) can be explained.
pub fn input_gradients(bag: &Bag, params: &NetworkParams, k_fraction: f64) -> Result<InstanceGradients> {
    if bag.geometry.is_none() {
        return Err(Error::Contract(format!(
            "bag {} has no patch geometry; use its score alone as the explanation",
            bag.id
        )));
    }
    instance_gradients(bag, params, k_fraction)
}

pub(crate) fn instance_gradients(
    bag: &Bag,
    params: &NetworkParams,
    k_fraction: f64,
) -> Result<InstanceGradients> {
    bag.validate()?;
    if bag.dim() != params.input_dim() {
        return Err(Error::dim("bag instances", params.input_dim(), bag.dim()));
    }
    let n = bag.len();
    let k = crate::mil::k_for(n, k_fraction);
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::from_rows(&bag.instances)?);
    let (scores, _) = record_layers(&mut tape, params.layers(), x)?;
    let (phi, selected) = tape.segment_top_k_mean(scores, &[(n, k)])?;
    let phi_k = tape.value(phi).data()[0];
    let sum = tape.mean(phi);
    let grads = tape.backward(sum)?;
    let g = grads.get(x).expect("input is tracked");
    let magnitudes = (0..n).map(|j| g.row(j).iter().map(|v| v.abs()).collect()).collect();
    Ok(InstanceGradients {
        phi_k,
        selected: selected.into_iter().next().unwrap_or_default(),
        magnitudes,
    })
}

/// Places patch gradients back on the image grid. Each pixel is the sum of
/// the gradients of every patch covering it divided by the number of
/// covering patches.
pub fn assemble_map(magnitudes: &[Vec<f64>], geometry: &PatchGeometry) -> Result<SaliencyMap> {
    let p = geometry.patch;
    if magnitudes.len() != geometry.n_patches() {
        return Err(Error::dim("patch gradients", geometry.n_patches(), magnitudes.len()));
    }
    if let Some(bad) = magnitudes.iter().find(|m| m.len() != p * p) {
        return Err(Error::dim("patch gradient length", p * p, bad.len()));
    }
    if p > geometry.height || p > geometry.width {
        return Err(Error::Contract("patch larger than image".into()));
    }
    let (h, w) = (geometry.height, geometry.width);
    let mut sum = vec![0.0; h * w];
    let mut cover = vec![0u32; h * w];
    for (idx, m) in magnitudes.iter().enumerate() {
        let (y0, x0) = geometry.origin(idx);
        for dy in 0..p {
            for dx in 0..p {
                let at = (y0 + dy) * w + x0 + dx;
                sum[at] += m[dy * p + dx];
                cover[at] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&cover)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(SaliencyMap {
        image_id: geometry.image_id,
        width: w,
        height: h,
        values,
    })
}

/// Blur width for an image side, scaled from the reference resolution and
/// never below 1.
pub fn blur_sigma_for(side: usize) -> f64 {
    (REFERENCE_SIGMA * side as f64 / REFERENCE_SIDE).max(1.0)
}

pub fn kernel_radius(sigma: f64) -> usize {
    (2.0 * sigma).round() as usize
}

fn taps(sigma: f64) -> Vec<f64> {
    let r = kernel_radius(sigma) as i64;
    (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn blur_axis(src: &[f64], h: usize, w: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (ki, &kv) in kernel.iter().enumerate() {
                let d = ki as i64 - r;
                let (yy, xx) = if along_x {
                    (y as i64, x as i64 + d)
                } else {
                    (y as i64 + d, x as i64)
                };
                if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                    continue;
                }
                acc += kv * src[yy as usize * w + xx as usize];
                norm += kv;
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// Truncated Gaussian filter with radius `round(2 sigma)`. Out-of-bounds
/// taps are dropped and the remaining weights renormalized, so constant maps
/// pass through unchanged.
pub fn gaussian_blur(map: &SaliencyMap, sigma: f64) -> Result<SaliencyMap> {
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("blur sigma must be > 0, got {sigma}")));
    }
    let kernel = taps(sigma);
    // the renormalized 2-D kernel factorizes over the in-bounds rectangle
    let tmp = blur_axis(&map.values, map.height, map.width, &kernel, true);
    let values = blur_axis(&tmp, map.height, map.width, &kernel, false);
    Ok(SaliencyMap { values, ..map.clone() })
}

/// The full localization pipeline for one image bag.
pub fn explain_bag(bag: &Bag, params: &NetworkParams, k_fraction: f64) -> Result<SaliencyMap> {
    let grads = input_gradients(bag, params, k_fraction)?;
    let geometry = bag.geometry.as_ref().expect("checked by input_gradients");
    let raw = assemble_map(&grads.magnitudes, geometry)?;
    gaussian_blur(&raw, blur_sigma_for(geometry.height.max(geometry.width)))
}

fn check_mask(map: &SaliencyMap, mask: &Mask) -> Result<()> {
    if mask.width != map.width || mask.height != map.height {
        return Err(Error::dim(
            "mask",
            format!("{}x{}", map.width, map.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    Ok(())
}

/// Pixel-level AUC-ROC of saliency values against the defect mask.
pub fn pixel_auc(map: &SaliencyMap, mask: &Mask) -> Result<f64> {
    check_mask(map, mask)?;
    auc_roc(&map.values, &mask.pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, DenseLayer};
    use crate::network::init_params;

    fn geometry(size: usize, patch: usize, stride: usize) -> PatchGeometry {
        let (_, g) =
            crate::data::extract_patch_grid(&vec![0.0; size * size], size, size, patch, stride)
                .unwrap();
        g
    }

    fn bag_with(geom: &PatchGeometry, seed: u64) -> Bag {
        let d = geom.patch * geom.patch;
        let inst = (0..geom.n_patches())
            .map(|j| (0..d).map(|i| (((j * 31 + i * 7 + seed as usize) % 13) as f64 - 6.0) / 3.0).collect())
            .collect();
        let mut b = Bag::new(1, 1, Some(0), inst).unwrap();
        b.geometry = Some(geom.clone());
        b
    }

    #[test]
    fn zero_network_gives_zero_gradients() {
        let g = geometry(8, 4, 4);
        let mut p = init_params(&[16, 5, 3], 2).unwrap();
        for l in p.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let ig = input_gradients(&bag_with(&g, 0), &p, 0.1).unwrap();
        assert!(ig.magnitudes.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_network_with_full_k_spreads_weights() {
        let g = geometry(8, 4, 4);
        let w: Vec<f64> = (0..16).map(|i| i as f64 - 7.5).collect();
        let feat = DenseLayer::new(
            Tensor::new(vec![16, 1], w.clone()).unwrap(),
            Tensor::zeros(vec![1]),
            Activation::Identity,
        )
        .unwrap();
        let scorer = DenseLayer::new(
            Tensor::from_rows(&[[1.0]]).unwrap(),
            Tensor::zeros(vec![1]),
            Activation::Identity,
        )
        .unwrap();
        let p = NetworkParams::from_layers(vec![feat, scorer]).unwrap();
        let ig = input_gradients(&bag_with(&g, 3), &p, 1.0).unwrap();
        let n = g.n_patches() as f64;
        for m in &ig.magnitudes {
            for (v, wi) in m.iter().zip(&w) {
                assert!((v - wi.abs() / n).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tabular_bags_cannot_be_explained() {
        let p = init_params(&[2, 3], 0).unwrap();
        let b = Bag::new(0, 1, Some(0), vec![vec![1.0, 2.0]]).unwrap();
        let err = input_gradients(&b, &p, 0.1).unwrap_err();
        assert!(err.to_string().contains("score alone"), "{err}");
    }

    #[test]
    fn non_overlapping_tiling_copies_blocks() {
        let g = geometry(8, 4, 4);
        let mags: Vec<Vec<f64>> = (0..4).map(|j| (0..16).map(|i| (j * 16 + i) as f64).collect()).collect();
        let m = assemble_map(&mags, &g).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let patch = (y / 4) * 2 + x / 4;
                assert_eq!(m.get(y, x), mags[patch][(y % 4) * 4 + x % 4]);
            }
        }
        assert!(assemble_map(&mags[..3], &g).is_err());
    }

    #[test]
    fn doubled_coverage_is_averaged() {
        // 1-D overlap of two along each axis: patch 4, stride 2 on 6 pixels
        let g = geometry(6, 4, 2);
        let mags = vec![vec![2.0; 16]; g.n_patches()];
        let m = assemble_map(&mags, &g).unwrap();
        assert!(m.values.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn blur_basics() {
        let mut delta = SaliencyMap { image_id: 0, width: 11, height: 11, values: vec![0.0; 121] };
        delta.values[5 * 11 + 5] = 1.0;
        let b = gaussian_blur(&delta, 1.0).unwrap();
        assert_eq!(b.argmax(), (5, 5));
        assert!((b.get(5, 6) / b.get(5, 5) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(b.get(5, 8), 0.0);
        let flat = SaliencyMap { values: vec![0.7; 121], ..delta.clone() };
        let fb = gaussian_blur(&flat, 1.3).unwrap();
        assert!(fb.values.iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert!(gaussian_blur(&flat, 0.0).is_err());
    }

    #[test]
    fn sigma_scaling() {
        assert_eq!(blur_sigma_for(128), 4.0);
        assert_eq!(blur_sigma_for(32), 1.0);
        assert_eq!(blur_sigma_for(16), 1.0);
        assert_eq!(blur_sigma_for(256), 8.0);
        assert_eq!(kernel_radius(1.0), 2);
    }

    #[test]
    fn pixel_auc_extremes() {
        let mask = Mask::new(3, 2, vec![0, 1, 1, 0, 0, 1]).unwrap();
        let perfect = SaliencyMap {
            image_id: 0,
            width: 3,
            height: 2,
            values: mask.pixels.iter().map(|&p| p as f64).collect(),
        };
        assert_eq!(pixel_auc(&perfect, &mask).unwrap(), 1.0);
        let inverse = SaliencyMap {
            values: perfect.values.iter().map(|v| 1.0 - v).collect(),
            ..perfect.clone()
        };
        assert_eq!(pixel_auc(&inverse, &mask).unwrap(), 0.0);
        let blank = Mask::new(3, 2, vec![0; 6]).unwrap();
        assert!(pixel_auc(&perfect, &blank).is_err());
        let wrong = Mask::new(2, 3, vec![0, 1, 0, 1, 0, 1]).unwrap();
        assert!(pixel_auc(&perfect, &wrong).is_err());
    }
}
