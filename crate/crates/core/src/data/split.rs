//! Few-shot, open-set and contamination splits of a labeled dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bag::Bag;
use crate::error::{Error, Result};

/// Highest contamination rate accepted without an explicit override.
pub const MAX_CONTAMINATION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitMode {
    /// Labeled anomalies drawn across all anomaly classes.
    RandomAnomaly,
    /// Labeled anomalies from `seen_class` only; that class is removed from
    /// the test set entirely.
    OpenSet { seen_class: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub n_labeled: usize,
    /// Fraction of the clean normal pool size added as unlabeled anomalies.
    pub contamination: f64,
    /// Share of normal samples held out for testing.
    pub test_normal_fraction: f64,
    pub allow_high_contamination: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::RandomAnomaly,
            n_labeled: 10,
            contamination: 0.0,
            test_normal_fraction: 0.3,
            allow_high_contamination: false,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_labeled == 0 {
            return Err(Error::Config("at least one labeled anomaly is required".into()));
        }
        if !(self.contamination >= 0.0) || !self.contamination.is_finite() {
            return Err(Error::Config(format!(
                "contamination rate must be >= 0, got {}",
                self.contamination
            )));
        }
        if self.contamination > MAX_CONTAMINATION && !self.allow_high_contamination {
            return Err(Error::Config(format!(
                "contamination rate {} exceeds {MAX_CONTAMINATION}; pass the override to allow it",
                self.contamination
            )));
        }
        if !(self.test_normal_fraction > 0.0 && self.test_normal_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test normal fraction must lie in (0, 1), got {}",
                self.test_normal_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Normal training pool, including contamination (label 0).
    pub train_normal: Vec<Bag>,
    pub train_anomaly: Vec<Bag>,
    pub test: Vec<Bag>,
    /// Ids of anomalies hidden in the normal pool.
    pub contaminated_ids: Vec<u64>,
}

impl Split {
    pub fn test_anomaly_classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self
            .test
            .iter()
            .filter(|b| b.label == 1)
            .filter_map(|b| b.class_id)
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Splits `dataset` into a normal training pool, labeled anomalies and a test
/// set. All three are disjoint by sample id.
pub fn make_split(dataset: &[Bag], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normals: Vec<&Bag> = dataset.iter().filter(|b| b.label == 0).collect();
    let mut anomalies: Vec<&Bag> = dataset.iter().filter(|b| b.label == 1).collect();
    normals.shuffle(&mut rng);
    anomalies.shuffle(&mut rng);

    let n_test_normal = (spec.test_normal_fraction * normals.len() as f64).round() as usize;
    if n_test_normal == 0 || n_test_normal >= normals.len() {
        return Err(Error::Config(format!(
            "{} normal samples cannot be split into train and test",
            normals.len()
        )));
    }
    let (test_normals, pool) = normals.split_at(n_test_normal);

    let (labeled, mut test_pool): (Vec<&Bag>, Vec<&Bag>) = match spec.mode {
        SplitMode::RandomAnomaly => {
            if anomalies.len() < spec.n_labeled {
                return Err(Error::Config(format!(
                    "requested {} labeled anomalies but the dataset has {}",
                    spec.n_labeled,
                    anomalies.len()
                )));
            }
            let (l, rest) = anomalies.split_at(spec.n_labeled);
            (l.to_vec(), rest.to_vec())
        }
        SplitMode::OpenSet { seen_class } => {
            let (seen, unseen): (Vec<&Bag>, Vec<&Bag>) =
                anomalies.iter().partition(|b| b.class_id == Some(seen_class));
            if seen.len() < spec.n_labeled {
                return Err(Error::Config(format!(
                    "requested {} labeled anomalies of class {seen_class} but it has {}",
                    spec.n_labeled,
                    seen.len()
                )));
            }
            // the rest of the seen class is dropped, not tested
            (seen[..spec.n_labeled].to_vec(), unseen)
        }
    };

    let n_contam = (spec.contamination * pool.len() as f64).round() as usize;
    if n_contam >= test_pool.len() {
        return Err(Error::Config(format!(
            "contamination needs {n_contam} anomalies plus at least one left for testing, \
             but only {} are available",
            test_pool.len()
        )));
    }
    let contaminants: Vec<&Bag> = test_pool.drain(..n_contam).collect();

    let mut train_normal: Vec<Bag> = pool.iter().map(|&b| b.clone()).collect();
    let contaminated_ids = contaminants.iter().map(|b| b.id).collect();
    train_normal.extend(contaminants.into_iter().map(|b| Bag {
        label: 0,
        ..b.clone()
    }));
    let train_anomaly = labeled.into_iter().cloned().collect();
    let mut test: Vec<Bag> = test_normals.iter().map(|&b| b.clone()).collect();
    test.extend(test_pool.into_iter().cloned());
    test.sort_by_key(|b| b.id);
    train_normal.sort_by_key(|b| b.id);

    Ok(Split {
        train_normal,
        train_anomaly,
        test,
        contaminated_ids,
    })
}
