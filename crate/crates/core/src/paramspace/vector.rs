use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layout::{ClassId, ParamLayout};
use crate::error::{Error, Result};

/// Flat model parameters plus the layout describing them.
///
/// `head_init` records the values every head column had when its class was
/// added, so a model lacking a class can be lifted into a later layout the
/// same way the later model was initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: ParamLayout,
    values: Vec<f64>,
    head_init: BTreeMap<ClassId, Vec<f64>>,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        Self::with_head_init(layout, values, BTreeMap::new())
    }

    pub fn with_head_init(
        layout: ParamLayout,
        values: Vec<f64>,
        head_init: BTreeMap<ClassId, Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self {
            layout,
            values,
            head_init,
        })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        let n = layout.total_len();
        Self {
            layout,
            values: vec![0.0; n],
            head_init: BTreeMap::new(),
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn head_init(&self) -> &BTreeMap<ClassId, Vec<f64>> {
        &self.head_init
    }

    /// Same layout and head record, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::with_head_init(self.layout.clone(), values, self.head_init.clone())
    }

    pub fn ensure_same_layout(&self, other: &ParamLayout) -> Result<()> {
        if &self.layout != other {
            return Err(Error::Layout(format!(
                "layouts differ ({} vs {} coordinates, classes {:?} vs {:?})",
                self.layout.total_len(),
                other.total_len(),
                self.layout.classes(),
                other.classes()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.ensure_same_layout(other.layout())?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// `self - other`, keeping `self`'s head record.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.ensure_same_layout(other.layout())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        self.with_values(values)
    }

    /// Lifts this vector into `target`'s layout. Missing head columns take
    /// the values recorded in `target`'s head-initialization record.
    pub fn reconcile_to(&self, target: &ParamVector) -> Result<ParamVector> {
        if self.layout == target.layout {
            return Ok(self.clone());
        }
        let values = self.layout.embed(&self.values, &target.layout, |class| {
            target.head_init.get(&class).cloned().ok_or_else(|| {
                Error::Layout(format!("no recorded initialization for class {class}"))
            })
        })?;
        let mut head_init = target.head_init.clone();
        head_init.extend(self.head_init.iter().map(|(k, v)| (*k, v.clone())));
        ParamVector::with_head_init(target.layout.clone(), values, head_init)
    }
}

/// Gradient of a scalar loss with respect to a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl GradientVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "{} gradient entries for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
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

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
