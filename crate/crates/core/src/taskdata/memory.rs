//! Exemplar replay memory with a fixed per-class budget.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::paramspace::ClassId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryPolicy {
    #[default]
    Random,
    Herding,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub per_class_budget: usize,
    #[serde(default)]
    pub policy: MemoryPolicy,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            per_class_budget: 20,
            policy: MemoryPolicy::Random,
        }
    }
}

/// Maps an input row into the space herding operates in.
pub type FeatureExtractor<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMemory {
    per_class_budget: usize,
    policy: MemoryPolicy,
    seed: u64,
    dim: usize,
    store: BTreeMap<ClassId, Vec<Vec<f64>>>,
}

impl ReplayMemory {
    pub fn new(config: &MemoryConfig, dim: usize, seed: u64) -> Result<Self> {
        if config.per_class_budget == 0 {
            return Err(Error::InvalidConfig("memory budget must be >= 1".into()));
        }
        Ok(Self {
            per_class_budget: config.per_class_budget,
            policy: config.policy,
            seed,
            dim,
            store: BTreeMap::new(),
        })
    }

    pub fn per_class_budget(&self) -> usize {
        self.per_class_budget
    }

    pub fn policy(&self) -> MemoryPolicy {
        self.policy
    }

    pub fn store(&self) -> &BTreeMap<ClassId, Vec<Vec<f64>>> {
        &self.store
    }

    pub fn len(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Selects exemplars for each of `classes` from `train`, replacing any
    /// earlier selection for those classes.
    pub fn update(
        &mut self,
        train: &LabeledDataset,
        classes: &[ClassId],
        extractor: Option<FeatureExtractor<'_>>,
    ) -> Result<()> {
        if train.dim() != self.dim {
            return Err(Error::Shape(format!(
                "memory holds width {} but the task has width {}",
                self.dim,
                train.dim()
            )));
        }
        for &class in classes {
            let idx: Vec<usize> = (0..train.len())
                .filter(|&i| train.labels()[i] == class)
                .collect();
            if idx.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            let chosen = match self.policy {
                MemoryPolicy::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        self.seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    random_subset(&mut rng, idx.len(), self.per_class_budget)
                }
                MemoryPolicy::Herding => {
                    let feats: Vec<Vec<f64>> = idx
                        .iter()
                        .map(|&i| match extractor {
                            Some(f) => f(train.row(i)),
                            None => train.row(i).to_vec(),
                        })
                        .collect();
                    herding_order(&feats, self.per_class_budget)
                }
            };
            self.store.insert(
                class,
                chosen
                    .into_iter()
                    .map(|k| train.row(idx[k]).to_vec())
                    .collect(),
            );
        }
        Ok(())
    }

    /// All stored exemplars, classes ascending.
    pub fn as_dataset(&self) -> LabeledDataset {
        let mut out = LabeledDataset::empty(self.dim, Split::Train);
        for (&class, rows) in &self.store {
            for r in rows {
                out.push(r, class);
            }
        }
        out
    }
}

/// Uniform subset of `min(k, n)` positions, kept in ascending order.
fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Greedy mean matching: at step `k` pick the unused point that brings the
/// running mean of the selection closest to the class mean. Ties go to the
/// lowest index. Returns positions in selection order.
pub fn herding_order(features: &[Vec<f64>], budget: usize) -> Vec<usize> {
    let n = features.len();
    if n == 0 {
        return Vec::new();
    }
    let d = features[0].len();
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut used = vec![false; n];
    let mut running = vec![0.0; d];
    let mut order = Vec::with_capacity(budget.min(n));
    for k in 1..=budget.min(n) {
        let mut best = None;
        let mut best_dist = f64::INFINITY;
        for (i, f) in features.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist: f64 = (0..d)
                .map(|j| {
                    let diff = mean[j] - (running[j] + f[j]) / k as f64;
                    diff * diff
                })
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = Some(i);
            }
        }
        let i = best.expect("an unused point remains");
        used[i] = true;
        for (r, v) in running.iter_mut().zip(&features[i]) {
            *r += v;
        }
        order.push(i);
    }
    order
}
