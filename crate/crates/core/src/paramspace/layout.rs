use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Dense MLP architecture. `num_classes` tracks the head width and grows
/// as tasks arrive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if let Some(pos) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!(
                "hidden layer {pos} has width 0"
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("num_classes must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the representation feeding the head.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// `(fan_in, fan_out)` for every hidden layer, excluding the head.
    pub fn hidden_layers(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim;
        self.hidden_dims
            .iter()
            .map(|&d| {
                let shape = (fan_in, d);
                fan_in = d;
                shape
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Segment table of a flat parameter vector.
///
/// Every weight matrix is stored row-major as `out x in`, followed by its
/// bias. The head is the last pair of segments and is class-major, so a new
/// class appends one row to `head.weight` and one entry to `head.bias`
/// without disturbing any existing `(segment, offset)` value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    spec: NetworkSpec,
    classes: Vec<ClassId>,
    segments: Vec<Segment>,
}

impl ParamLayout {
    pub fn new(spec: &NetworkSpec, classes: &[ClassId]) -> Result<Self> {
        spec.validate()?;
        if classes.len() != spec.num_classes {
            return Err(Error::InvalidSpec(format!(
                "spec declares {} classes but {} class ids were given",
                spec.num_classes,
                classes.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &c in classes {
            if !seen.insert(c) {
                return Err(Error::DuplicateClass(c));
            }
        }

        let mut segments = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, len: usize| -> Result<()> {
            segments.push(Segment { name, offset, len });
            offset = offset
                .checked_add(len)
                .ok_or_else(|| Error::InvalidSpec("parameter count overflows usize".into()))?;
            Ok(())
        };
        for (l, (fan_in, fan_out)) in spec.hidden_layers().into_iter().enumerate() {
            let w = fan_in
                .checked_mul(fan_out)
                .ok_or_else(|| Error::InvalidSpec("parameter count overflows usize".into()))?;
            push(format!("layer{l}.weight"), w)?;
            push(format!("layer{l}.bias"), fan_out)?;
        }
        let head_w = spec
            .feature_dim()
            .checked_mul(classes.len())
            .ok_or_else(|| Error::InvalidSpec("parameter count overflows usize".into()))?;
        push(HEAD_WEIGHT.to_string(), head_w)?;
        push(HEAD_BIAS.to_string(), classes.len())?;

        Ok(Self {
            spec: spec.clone(),
            classes: classes.to_vec(),
            segments,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Class ids in head-column order.
    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map(|s| s.offset + s.len).unwrap_or(0)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Class id → head column index.
    pub fn head_columns(&self) -> BTreeMap<ClassId, usize> {
        self.classes
            .iter()
            .enumerate()
            .map(|(k, &c)| (c, k))
            .collect()
    }

    pub fn column_of(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.classes.contains(&class)
    }

    /// Layout with `new_classes` appended to the head.
    pub fn with_classes(&self, new_classes: &[ClassId]) -> Result<Self> {
        for &c in new_classes {
            if self.has_class(c) {
                return Err(Error::DuplicateClass(c));
            }
        }
        let mut classes = self.classes.clone();
        classes.extend_from_slice(new_classes);
        let mut spec = self.spec.clone();
        spec.num_classes = classes.len();
        Self::new(&spec, &classes)
    }

    /// Flat indices of a class column: `feature_dim` weights then the bias.
    pub fn column_indices(&self, class: ClassId) -> Option<Vec<usize>> {
        let k = self.column_of(class)?;
        let h = self.spec.feature_dim();
        let w = self.segment(HEAD_WEIGHT)?;
        let b = self.segment(HEAD_BIAS)?;
        let mut idx: Vec<usize> = (0..h).map(|i| w.offset + k * h + i).collect();
        idx.push(b.offset + k);
        Some(idx)
    }

    /// True when every non-head segment matches and this layout's classes
    /// form a subset of `other`'s.
    pub fn embeds_into(&self, other: &ParamLayout) -> bool {
        self.spec.input_dim == other.spec.input_dim
            && self.spec.hidden_dims == other.spec.hidden_dims
            && self.spec.activation == other.spec.activation
            && self.classes.iter().all(|&c| other.has_class(c))
    }

    /// Maps `values` (laid out by `self`) into `target`. Backbone coordinates
    /// copy over by offset; head columns are matched by class id. Columns
    /// for classes missing from `self` are produced by `fill(class)`, which
    /// must return `feature_dim + 1` values (weights then bias).
    pub fn embed<F>(&self, values: &[f64], target: &ParamLayout, mut fill: F) -> Result<Vec<f64>>
    where
        F: FnMut(ClassId) -> Result<Vec<f64>>,
    {
        if values.len() != self.total_len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                self.total_len()
            )));
        }
        if !self.embeds_into(target) {
            return Err(Error::Layout(format!(
                "cannot embed classes {:?} with hidden {:?} into classes {:?} with hidden {:?}",
                self.classes, self.spec.hidden_dims, target.classes, target.spec.hidden_dims
            )));
        }
        let mut out = vec![0.0; target.total_len()];
        for seg in &self.segments {
            if seg.name == HEAD_WEIGHT || seg.name == HEAD_BIAS {
                continue;
            }
            let dst = target
                .segment(&seg.name)
                .ok_or_else(|| Error::Layout(format!("segment {} missing", seg.name)))?;
            out[dst.range()].copy_from_slice(&values[seg.range()]);
        }
        let h = target.spec.feature_dim();
        for &class in &target.classes {
            let dst = target.column_indices(class).expect("class is in target");
            let column: Vec<f64> = match self.column_indices(class) {
                Some(src) => src.iter().map(|&i| values[i]).collect(),
                None => fill(class)?,
            };
            if column.len() != h + 1 {
                return Err(Error::Shape(format!(
                    "head column for class {class} has {} values, expected {}",
                    column.len(),
                    h + 1
                )));
            }
            for (&i, v) in dst.iter().zip(column) {
                out[i] = v;
            }
        }
        Ok(out)
    }
}
