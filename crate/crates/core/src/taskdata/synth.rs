//! Seeded isotropic Gaussian cluster datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::paramspace::ClassId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTaskConfig {
    pub dim: usize,
    pub classes: usize,
    #[serde(default = "one")]
    pub clusters_per_class: usize,
    /// Minimum distance between any two cluster means, in units of the
    /// cluster standard deviation.
    pub separation: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

/// Cluster mean assigned to a class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMean {
    pub class: ClassId,
    pub mean: Vec<f64>,
}

/// Draws cluster means uniformly in a cube by rejection so that every pair
/// is at least `separation` apart, then samples unit-variance points around
/// them. Train and test draws come from independent streams.
pub fn synth_gaussian_tasks(cfg: &GaussianTaskConfig) -> Result<SplitDataset> {
    if !(cfg.separation > 0.0 && cfg.separation.is_finite()) {
        return Err(Error::InvalidConfig("separation must be > 0".into()));
    }
    if cfg.dim == 0 || cfg.classes == 0 || cfg.clusters_per_class == 0 {
        return Err(Error::InvalidConfig(
            "dim, classes and clusters_per_class must be >= 1".into(),
        ));
    }
    if cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::InvalidConfig(
            "per-class sample counts must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_clusters = cfg.classes * cfg.clusters_per_class;
    let mut half_width = cfg.separation * (n_clusters as f64).powf(1.0 / cfg.dim as f64).max(1.0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    let mut attempts = 0usize;
    while means.len() < n_clusters {
        let cand: Vec<f64> = (0..cfg.dim)
            .map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let ok = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= cfg.separation * cfg.separation
        });
        if ok {
            means.push(cand);
        }
        attempts += 1;
        if attempts.is_multiple_of(10_000) {
            half_width *= 1.1;
        }
    }
    let clusters: Vec<ClusterMean> = means
        .into_iter()
        .enumerate()
        .map(|(i, mean)| ClusterMean {
            class: i / cfg.clusters_per_class,
            mean,
        })
        .collect();

    let train_seed = rng.random::<u64>();
    let test_seed = rng.random::<u64>();
    Ok(SplitDataset {
        train: sample_clusters(
            &clusters,
            cfg.train_per_class,
            1.0,
            Split::Train,
            train_seed,
        )?,
        test: sample_clusters(&clusters, cfg.test_per_class, 1.0, Split::Test, test_seed)?,
    })
}

/// Samples `per_class` points for each class, spread round-robin over that
/// class's clusters, with isotropic noise of standard deviation `sigma`.
/// Rows are grouped by class in ascending class order.
pub fn sample_clusters(
    clusters: &[ClusterMean],
    per_class: usize,
    sigma: f64,
    split: Split,
    seed: u64,
) -> Result<LabeledDataset> {
    let dim = clusters
        .first()
        .map(|c| c.mean.len())
        .ok_or(Error::EmptyDataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<ClassId> = clusters.iter().map(|c| c.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = LabeledDataset::empty(dim, split);
    let mut row = vec![0.0; dim];
    for class in classes {
        let own: Vec<&ClusterMean> = clusters.iter().filter(|c| c.class == class).collect();
        for s in 0..per_class {
            let centre = &own[s % own.len()].mean;
            for (r, m) in row.iter_mut().zip(centre) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *r = m + sigma * z;
            }
            out.push(&row, class);
        }
    }
    Ok(out)
}
