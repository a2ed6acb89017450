mod common;

use common::{oracle_forward, random_params};
use devscore::data::{extract_patch_grid, window_offsets};
use devscore::explain::{assemble_map, gaussian_blur, input_gradients, kernel_radius, SaliencyMap};
use devscore::mil::k_for;
use devscore::network::NetworkParams;
use devscore::{Bag, PatchGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Top-K score of a bag plus the distance to the nearest kink (a hidden
/// pre-activation at 0 or a tie at the top-K boundary).
fn oracle_phi(p: &NetworkParams, inst: &[Vec<f64>], k: usize) -> (f64, f64) {
    let mut s = Vec::new();
    let mut min_pre = f64::INFINITY;
    for x in inst {
        let (v, pre) = oracle_forward(p, x);
        let n = pre.len();
        for z in &pre[..n - 2] {
            min_pre = min_pre.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        s.push(v);
    }
    let mut sorted = s.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let gap = if k < sorted.len() { sorted[k - 1] - sorted[k] } else { f64::INFINITY };
    (sorted[..k].iter().sum::<f64>() / k as f64, min_pre.min(gap))
}

#[test]
fn pixel_saliency_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let size = 12;
    let mut done = 0;
    while done < 5 {
        let img: Vec<f64> = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        let (inst, geom) = extract_patch_grid(&img, size, size, 4, 2).unwrap();
        let p = random_params(&[16, 6, 4], &mut rng);
        let k = k_for(inst.len(), 0.1);
        let (_, gap) = oracle_phi(&p, &inst, k);
        if gap < 1e-3 {
            continue;
        }
        let mut bag = Bag::new(0, 1, Some(0), inst.clone()).unwrap();
        bag.geometry = Some(geom.clone());
        let g = input_gradients(&bag, &p, 0.1).unwrap();
        let map = assemble_map(&g.magnitudes, &geom).unwrap();
        let origins = geom.origins();
        for _ in 0..20 {
            let (py, px) = (rng.random_range(0..size), rng.random_range(0..size));
            let (mut sum, mut count) = (0.0, 0.0);
            for (j, &(y0, x0)) in origins.iter().enumerate() {
                if !(y0..y0 + 4).contains(&py) || !(x0..x0 + 4).contains(&px) {
                    continue;
                }
                let at = (py - y0) * 4 + (px - x0);
                let h = 1e-6;
                let mut plus = inst.clone();
                plus[j][at] += h;
                let mut minus = inst.clone();
                minus[j][at] -= h;
                let d = (oracle_phi(&p, &plus, k).0 - oracle_phi(&p, &minus, k).0) / (2.0 * h);
                sum += d.abs();
                count += 1.0;
            }
            let want = sum / count;
            let got = map.get(py, px);
            assert!((got - want).abs() <= 1e-3 * want.abs().max(1e-6), "({py},{px}) {got} vs {want}");
        }
        done += 1;
    }
}

#[test]
fn assembly_matches_dense_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let size = rng.random_range(6..20);
        let patch = rng.random_range(1..=size.min(6));
        let stride = rng.random_range(1..=patch + 2);
        let rows = window_offsets(size, patch, stride).unwrap();
        let geom = PatchGeometry {
            image_id: 1,
            height: size,
            width: size,
            patch,
            stride,
            grid_rows: rows.len(),
            grid_cols: rows.len(),
        };
        let mags: Vec<Vec<f64>> = (0..geom.n_patches())
            .map(|_| (0..patch * patch).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let map = assemble_map(&mags, &geom).unwrap();
        for y in 0..size {
            for x in 0..size {
                let (mut s, mut c) = (0.0, 0usize);
                for (r, &y0) in rows.iter().enumerate() {
                    for (q, &x0) in rows.iter().enumerate() {
                        if y >= y0 && y < y0 + patch && x >= x0 && x < x0 + patch {
                            s += mags[r * rows.len() + q][(y - y0) * patch + (x - x0)];
                            c += 1;
                        }
                    }
                }
                let want = if c > 0 { s / c as f64 } else { 0.0 };
                assert!((map.get(y, x) - want).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn blur_matches_a_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(3..25), rng.random_range(3..25));
        let sigma = rng.random_range(0.5..4.0);
        let map = SaliencyMap {
            image_id: 0,
            width: w,
            height: h,
            values: (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let got = gaussian_blur(&map, sigma).unwrap();
        let r = kernel_radius(sigma) as i64;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (mut acc, mut norm) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        let k = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                        acc += k * map.values[(yy * w as i64 + xx) as usize];
                        norm += k;
                    }
                }
                let v = got.values[(y * w as i64 + x) as usize];
                assert!((v - acc / norm).abs() < 1e-12);
            }
        }
    }
}
