use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bag::Bag;
use crate::error::{Error, Result};

/// Isotropic Gaussian component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    /// Per-coordinate standard deviation.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyClass {
    pub count: usize,
    pub component: Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGenConfig {
    pub n_normal: usize,
    pub dim: usize,
    /// Equally weighted normal mixture.
    pub normal_components: Vec<Gaussian>,
    pub anomaly_classes: Vec<AnomalyClass>,
    pub seed: u64,
}

impl TabularGenConfig {
    /// Two normal clusters, three anomaly classes of 200 samples each,
    /// `D = 8`, `N = 2000`.
    ///
    /// The normal clusters sit at `±2` on the last coordinate. Anomaly class
    /// `c` is centred at distance 6 from the origin along its own direction;
    /// the three directions are distinct but all lie in the positive cone
    /// of the first three axes (pairwise cosine about 0.68), so a model
    /// trained on one class has a chance to rank the others above normal.
    pub fn standard(seed: u64) -> Self {
        let dim = 8;
        let axis = |d: usize, v: f64| {
            let mut m = vec![0.0; dim];
            m[d] = v;
            m
        };
        let normal_components = vec![
            Gaussian { mean: axis(dim - 1, 2.0), scale: 1.0 },
            Gaussian { mean: axis(dim - 1, -2.0), scale: 1.0 },
        ];
        let anomaly_classes = (0..3)
            .map(|c| {
                let mut m = vec![0.0; dim];
                // unit direction with weight on axis c and a shared component
                let (own, shared) = (1.0 / 2f64.sqrt(), 1.0 / 6f64.sqrt());
                for (d, v) in m.iter_mut().enumerate().take(3) {
                    *v = if d == c { own + shared } else { shared };
                }
                let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
                m.iter_mut().for_each(|v| *v *= 6.0 / norm);
                AnomalyClass {
                    count: 200,
                    component: Gaussian { mean: m, scale: 1.0 },
                }
            })
            .collect();
        Self {
            n_normal: 2000,
            dim,
            normal_components,
            anomaly_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_normal == 0 {
            return Err(Error::Config("n_normal must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dimension must be >= 2, got {}", self.dim)));
        }
        if self.normal_components.is_empty() {
            return Err(Error::Config("at least one normal component is required".into()));
        }
        let comps = self
            .normal_components
            .iter()
            .chain(self.anomaly_classes.iter().map(|a| &a.component));
        for g in comps {
            if g.mean.len() != self.dim {
                return Err(Error::dim("component mean", self.dim, g.mean.len()));
            }
            if !(g.scale >= 0.0) {
                return Err(Error::Config(format!("component scale must be >= 0, got {}", g.scale)));
            }
        }
        for (i, a) in self.anomaly_classes.iter().enumerate() {
            for b in &self.anomaly_classes[..i] {
                if a.component.mean == b.component.mean {
                    return Err(Error::Config(format!("anomaly class {i} repeats a class mean")));
                }
            }
        }
        Ok(())
    }
}

fn draw(g: &Gaussian, rng: &mut ChaCha8Rng) -> Vec<f64> {
    g.mean
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + g.scale * z
        })
        .collect()
}

/// Single-instance bags: `n_normal` normals (ids `0..N`, label 0) followed
/// by each anomaly class in order (label 1, `class_id` = class index).
pub fn gen_tabular(cfg: &TabularGenConfig) -> Result<Vec<Bag>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_comp = cfg.normal_components.len();
    let total = cfg.n_normal + cfg.anomaly_classes.iter().map(|a| a.count).sum::<usize>();
    let mut bags = Vec::with_capacity(total);
    for i in 0..cfg.n_normal {
        let comp = &cfg.normal_components[i % n_comp];
        bags.push(Bag::new(i as u64, 0, None, vec![draw(comp, &mut rng)])?);
    }
    for (c, class) in cfg.anomaly_classes.iter().enumerate() {
        for _ in 0..class.count {
            let id = bags.len() as u64;
            bags.push(Bag::new(id, 1, Some(c as u32), vec![draw(&class.component, &mut rng)])?);
        }
    }
    Ok(bags)
}
