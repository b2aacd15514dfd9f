//! The increment-vector transform.
//!
//! Given the previous solution (the anchor), the cumulative Fisher of all
//! earlier tasks and the current task's Fisher, each coordinate of the
//! increment `current - anchor` is shrunk by
//! `c = (prior + fresh) / (2 prior + fresh)`. Coordinates no earlier task
//! cared about (`prior == 0`) keep `c = 1` and move freely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherDiagonal;
use crate::paramspace::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementTransform {
    coefficients: Vec<f64>,
    anchor: ParamVector,
}

/// Coefficient for one coordinate.
pub fn coefficient(prior: f64, fresh: f64) -> f64 {
    if prior > 0.0 {
        (prior + fresh) / (2.0 * prior + fresh)
    } else {
        1.0
    }
}

impl IncrementTransform {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }

    pub fn mean_coefficient(&self) -> f64 {
        if self.coefficients.is_empty() {
            return 1.0;
        }
        self.coefficients.iter().sum::<f64>() / self.coefficients.len() as f64
    }
}

/// Builds the transform. `prior_cum` may be laid out for fewer classes than
/// the anchor; it is padded with zeros.
pub fn build_transform(
    prior_cum: &FisherDiagonal,
    current_task: &FisherDiagonal,
    anchor: &ParamVector,
) -> Result<IncrementTransform> {
    let layout = anchor.layout();
    let prior = prior_cum.pad_to(layout)?;
    if current_task.layout() != layout {
        return Err(Error::Layout(
            "current-task fisher and anchor layouts differ".into(),
        ));
    }
    let mut coefficients = Vec::with_capacity(layout.total_len());
    for (index, (&p, &f)) in prior.values().iter().zip(current_task.values()).enumerate() {
        if p < 0.0 {
            return Err(Error::NegativeFisher { index, value: p });
        }
        if f < 0.0 {
            return Err(Error::NegativeFisher { index, value: f });
        }
        coefficients.push(coefficient(p, f));
    }
    Ok(IncrementTransform {
        coefficients,
        anchor: anchor.clone(),
    })
}

/// `anchor + c * (current - anchor)`, clamped onto the segment between the
/// two. Coordinates with `c == 1` return `current` unchanged.
pub fn apply_transform(
    transform: &IncrementTransform,
    current: &ParamVector,
) -> Result<ParamVector> {
    let anchor = &transform.anchor;
    current.ensure_same_layout(anchor.layout())?;
    let values = current
        .values()
        .iter()
        .zip(anchor.values())
        .zip(&transform.coefficients)
        .map(|((&x, &a), &c)| {
            if c == 1.0 {
                return x;
            }
            let y = a + c * (x - a);
            y.clamp(a.min(x), a.max(x))
        })
        .collect();
    current.with_values(values)
}

/// True when the IVT step should run after 1-based epoch `epoch`.
pub fn schedule_hook(epoch: usize, interval: usize) -> bool {
    interval >= 1 && epoch.is_multiple_of(interval)
}
