use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::{Batch, ClassId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<ClassId>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<ClassId>, split: Split) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature width must be >= 1".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
            split,
        })
    }

    pub fn empty(dim: usize, split: Split) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
            split,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            dim: self.dim,
            features: &self.features,
            labels: &self.labels,
        }
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.labels.iter().copied().collect()
    }

    pub fn push(&mut self, row: &[f64], label: ClassId) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    /// Copies the rows at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> LabeledDataset {
        let mut out = LabeledDataset::empty(self.dim, self.split);
        out.features.reserve(indices.len() * self.dim);
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    /// Rows whose label is in `classes`, original order preserved.
    pub fn filter_classes(&self, classes: &[ClassId]) -> LabeledDataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.gather(&keep)
    }

    /// Appends all rows of `other`.
    pub fn extend(&mut self, other: &LabeledDataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Shape(format!(
                "cannot concatenate width {} onto width {}",
                other.dim, self.dim
            )));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn concat<'a, I>(dim: usize, split: Split, parts: I) -> Result<LabeledDataset>
    where
        I: IntoIterator<Item = &'a LabeledDataset>,
    {
        let mut out = LabeledDataset::empty(dim, split);
        for p in parts {
            out.extend(p)?;
        }
        Ok(out)
    }
}

/// A dataset with its train and test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl SplitDataset {
    pub fn classes(&self) -> BTreeSet<ClassId> {
        let mut c = self.train.classes();
        c.extend(self.test.classes());
        c
    }
}
