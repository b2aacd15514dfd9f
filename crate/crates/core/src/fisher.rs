//! Online diagonal Fisher estimation and the cumulative Fisher ledger.
//!
//! Two estimators are offered. `BatchMeanSq` squares the mean gradient of
//! each mini-batch, as the training loop naturally produces it.
//! `PerSampleSq` squares every example's gradient before averaging, which is
//! the textbook empirical Fisher diagonal. The two differ by a factor that
//! depends on the batch size and coincide for batches of one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::{GradientVector, ParamLayout};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    #[default]
    BatchMeanSq,
    PerSampleSq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl FisherDiagonal {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "{} fisher entries for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("fisher diagonal"));
            }
            if value < 0.0 {
                return Err(Error::NegativeFisher { index, value });
            }
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        let n = layout.total_len();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lifts into a larger layout; coordinates that did not exist get zero.
    pub fn pad_to(&self, layout: &ParamLayout) -> Result<FisherDiagonal> {
        if &self.layout == layout {
            return Ok(self.clone());
        }
        let h = layout.spec().feature_dim();
        let values = self
            .layout
            .embed(&self.values, layout, |_| Ok(vec![0.0; h + 1]))?;
        Ok(FisherDiagonal {
            layout: layout.clone(),
            values,
        })
    }

    fn add_assign(&mut self, other: &FisherDiagonal) {
        debug_assert_eq!(self.layout, other.layout);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Gradient information handed to the accumulator for one mini-batch.
#[derive(Clone, Copy, Debug)]
pub enum BatchGradient<'a> {
    /// Mean gradient of the batch loss.
    Mean(&'a GradientVector),
    /// Individual per-example gradients.
    PerSample(&'a [GradientVector]),
}

/// Per-epoch running sum of squared gradients.
#[derive(Clone, Debug)]
pub struct FisherAccumulator {
    layout: ParamLayout,
    mode: FisherMode,
    sum: Vec<f64>,
    batches: usize,
}

impl FisherAccumulator {
    pub fn new(layout: ParamLayout, mode: FisherMode) -> Self {
        let n = layout.total_len();
        Self {
            layout,
            mode,
            sum: vec![0.0; n],
            batches: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn mode(&self) -> FisherMode {
        self.mode
    }

    fn check(&self, g: &GradientVector) -> Result<()> {
        if g.layout() != &self.layout {
            return Err(Error::Layout(
                "gradient layout differs from the accumulator's".into(),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to fisher accumulator"));
        }
        Ok(())
    }

    pub fn accumulate_batch(&mut self, grad: BatchGradient<'_>) -> Result<()> {
        match (self.mode, grad) {
            (FisherMode::BatchMeanSq, BatchGradient::Mean(g)) => {
                self.check(g)?;
                for (s, &v) in self.sum.iter_mut().zip(g.values()) {
                    *s += v * v;
                }
            }
            (FisherMode::BatchMeanSq, BatchGradient::PerSample(gs)) => {
                if gs.is_empty() {
                    return Err(Error::EmptyBatch);
                }
                let n = gs.len() as f64;
                let mut mean = vec![0.0; self.sum.len()];
                for g in gs {
                    self.check(g)?;
                    for (m, &v) in mean.iter_mut().zip(g.values()) {
                        *m += v;
                    }
                }
                for (s, m) in self.sum.iter_mut().zip(mean) {
                    let m = m / n;
                    *s += m * m;
                }
            }
            (FisherMode::PerSampleSq, BatchGradient::PerSample(gs)) => {
                if gs.is_empty() {
                    return Err(Error::EmptyBatch);
                }
                let n = gs.len() as f64;
                let mut sq = vec![0.0; self.sum.len()];
                for g in gs {
                    self.check(g)?;
                    for (q, &v) in sq.iter_mut().zip(g.values()) {
                        *q += v * v;
                    }
                }
                for (s, q) in self.sum.iter_mut().zip(sq) {
                    *s += q / n;
                }
            }
            (FisherMode::PerSampleSq, BatchGradient::Mean(_)) => {
                return Err(Error::InvalidConfig(
                    "per-sample fisher needs per-example gradients".into(),
                ));
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Mean contribution over the accumulated batches.
    pub fn finalize(&self) -> Result<FisherDiagonal> {
        if self.batches == 0 {
            return Err(Error::NoBatches);
        }
        let k = self.batches as f64;
        FisherDiagonal::new(
            self.layout.clone(),
            self.sum.iter().map(|s| s / k).collect(),
        )
    }
}

/// Per-task Fisher diagonals and their running sum.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FisherLedger {
    per_task: BTreeMap<usize, FisherDiagonal>,
    commit_order: Vec<usize>,
    cumulative: Option<FisherDiagonal>,
}

impl FisherLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn per_task(&self) -> &BTreeMap<usize, FisherDiagonal> {
        &self.per_task
    }

    pub fn commit_order(&self) -> &[usize] {
        &self.commit_order
    }

    pub fn is_empty(&self) -> bool {
        self.per_task.is_empty()
    }

    /// Sum of every committed diagonal, or `None` before the first commit.
    pub fn cumulative(&self) -> Option<&FisherDiagonal> {
        self.cumulative.as_ref()
    }

    /// Cumulative Fisher expressed in `layout`, zero where nothing was
    /// recorded (including a ledger with no commits).
    pub fn cumulative_for(&self, layout: &ParamLayout) -> Result<FisherDiagonal> {
        match &self.cumulative {
            Some(c) => c.pad_to(layout),
            None => Ok(FisherDiagonal::zeros(layout.clone())),
        }
    }

    /// Adds `fisher` as task `task_id`'s diagonal. All stored entries are
    /// padded to the larger of the two layouts.
    pub fn commit_task(&mut self, task_id: usize, fisher: FisherDiagonal) -> Result<()> {
        if self.per_task.contains_key(&task_id) {
            return Err(Error::DuplicateCommit(task_id));
        }
        let fisher = match &self.cumulative {
            Some(c) if c.layout() != fisher.layout() => {
                if c.layout().embeds_into(fisher.layout()) {
                    let target = fisher.layout().clone();
                    for f in self.per_task.values_mut() {
                        *f = f.pad_to(&target)?;
                    }
                    self.cumulative = Some(c.pad_to(&target)?);
                    fisher
                } else {
                    fisher.pad_to(c.layout())?
                }
            }
            _ => fisher,
        };
        match &mut self.cumulative {
            Some(c) => c.add_assign(&fisher),
            None => self.cumulative = Some(fisher.clone()),
        }
        self.per_task.insert(task_id, fisher);
        self.commit_order.push(task_id);
        Ok(())
    }
}
