//! Forward pass, exact backpropagation and evaluation for dense MLPs stored
//! as flat parameter vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{ClassId, NetworkSpec, ParamLayout, HEAD_BIAS, HEAD_WEIGHT};
use super::vector::{GradientVector, ParamVector};
use crate::error::{Error, Result};

/// Borrowed view of labeled examples, rows stored contiguously.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub dim: usize,
    pub features: &'a [f64],
    pub labels: &'a [ClassId],
}

impl<'a> Batch<'a> {
    pub fn new(dim: usize, features: &'a [f64], labels: &'a [ClassId]) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} labels of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Single-example view.
    pub fn example(&self, i: usize) -> Batch<'a> {
        Batch {
            dim: self.dim,
            features: self.row(i),
            labels: &self.labels[i..i + 1],
        }
    }
}

/// Initialization of freshly added head columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    #[default]
    Zeros,
    /// Weights uniform in `±1/sqrt(feature_dim)`, bias zero.
    Uniform,
}

/// Deterministic initialization with classes `0..num_classes`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<ParamVector> {
    let classes: Vec<ClassId> = (0..spec.num_classes).collect();
    build_network_for_classes(spec, &classes, seed)
}

/// Hidden weights are drawn uniformly from `±1/sqrt(fan_in)` in segment
/// order, hidden biases start at zero, and head columns start at zero.
pub fn build_network_for_classes(
    spec: &NetworkSpec,
    classes: &[ClassId],
    seed: u64,
) -> Result<ParamVector> {
    let layout = ParamLayout::new(spec, classes)?;
    let mut values = vec![0.0; layout.total_len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (l, (fan_in, _)) in spec.hidden_layers().into_iter().enumerate() {
        let seg = layout
            .segment(&format!("layer{l}.weight"))
            .expect("hidden weight segment");
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[seg.range()] {
            *v = bound * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    let column = vec![0.0; spec.feature_dim() + 1];
    let head_init: BTreeMap<ClassId, Vec<f64>> =
        classes.iter().map(|&c| (c, column.clone())).collect();
    ParamVector::with_head_init(layout, values, head_init)
}

/// Appends head columns for `new_classes`. Every existing `(segment, offset)`
/// value is preserved bit-for-bit and the new columns are recorded in the
/// head-initialization record.
pub fn expand_head(
    params: &ParamVector,
    new_classes: &[ClassId],
    init: HeadInit,
    seed: u64,
) -> Result<ParamVector> {
    let mut dedup = std::collections::BTreeSet::new();
    for &c in new_classes {
        if !dedup.insert(c) || params.layout().has_class(c) {
            return Err(Error::DuplicateClass(c));
        }
    }
    let target = params.layout().with_classes(new_classes)?;
    let h = target.spec().feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fresh = BTreeMap::new();
    for &c in new_classes {
        let mut col = vec![0.0; h + 1];
        if init == HeadInit::Uniform {
            let bound = 1.0 / (h as f64).sqrt();
            for w in &mut col[..h] {
                *w = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        fresh.insert(c, col);
    }
    let values = params.layout().embed(params.values(), &target, |c| {
        Ok(fresh.get(&c).cloned().expect("new class column"))
    })?;
    let mut head_init = params.head_init().clone();
    head_init.extend(fresh);
    ParamVector::with_head_init(target, values, head_init)
}

/// Per-layer views into the flat vector: `(weights out x in, bias, fan_in, fan_out)`.
struct Layer<'a> {
    w: &'a [f64],
    b: &'a [f64],
    w_offset: usize,
    b_offset: usize,
    fan_in: usize,
    fan_out: usize,
}

fn layers(params: &ParamVector) -> Vec<Layer<'_>> {
    let layout = params.layout();
    let spec = layout.spec();
    let vals = params.values();
    let mut out = Vec::new();
    for (l, (fan_in, fan_out)) in spec.hidden_layers().into_iter().enumerate() {
        let w = layout.segment(&format!("layer{l}.weight")).expect("weight");
        let b = layout.segment(&format!("layer{l}.bias")).expect("bias");
        out.push(Layer {
            w: &vals[w.range()],
            b: &vals[b.range()],
            w_offset: w.offset,
            b_offset: b.offset,
            fan_in,
            fan_out,
        });
    }
    let w = layout.segment(HEAD_WEIGHT).expect("head weight");
    let b = layout.segment(HEAD_BIAS).expect("head bias");
    out.push(Layer {
        w: &vals[w.range()],
        b: &vals[b.range()],
        w_offset: w.offset,
        b_offset: b.offset,
        fan_in: spec.feature_dim(),
        fan_out: layout.classes().len(),
    });
    out
}

#[inline]
fn affine(layer: &Layer<'_>, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for o in 0..layer.fan_out {
        let row = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
        let mut z = layer.b[o];
        for i in 0..layer.fan_in {
            z += row[i] * input[i];
        }
        out.push(z);
    }
}

/// Runs one example, keeping every hidden activation (index 0 is the input).
fn forward_trace(layers: &[Layer<'_>], spec: &NetworkSpec, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.to_vec());
    let mut z = Vec::new();
    for layer in &layers[..layers.len() - 1] {
        affine(layer, acts.last().expect("input"), &mut z);
        acts.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
    }
    let mut logits = Vec::new();
    affine(
        layers.last().expect("head"),
        acts.last().expect("features"),
        &mut logits,
    );
    (acts, logits)
}

/// Logits for each input row, in head-column order.
pub fn forward(params: &ParamVector, inputs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let spec = params.layout().spec();
    let d = spec.input_dim;
    if !inputs.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "input of {} values is not a multiple of input_dim {d}",
            inputs.len()
        )));
    }
    let layers = layers(params);
    Ok(inputs
        .chunks(d)
        .map(|x| forward_trace(&layers, spec, x).1)
        .collect())
}

/// Head columns participating in the softmax, in ascending column order.
fn active_columns(layout: &ParamLayout, mask: Option<&[ClassId]>) -> Result<Vec<usize>> {
    match mask {
        None => Ok((0..layout.classes().len()).collect()),
        Some(m) => {
            let mut cols = Vec::with_capacity(m.len());
            for &c in m {
                let k = layout
                    .column_of(c)
                    .ok_or_else(|| Error::Layout(format!("masked class {c} has no head column")))?;
                cols.push(k);
            }
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                return Err(Error::Shape("empty class mask".into()));
            }
            Ok(cols)
        }
    }
}

/// Mean softmax cross-entropy over `batch`, restricted to the classes in
/// `mask` (all head classes when `None`), and its exact gradient. Head
/// columns outside the mask receive exactly zero gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: Batch<'_>,
    mask: Option<&[ClassId]>,
) -> Result<(f64, GradientVector)> {
    let layout = params.layout();
    let spec = layout.spec();
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.dim != spec.input_dim {
        return Err(Error::Shape(format!(
            "batch width {} != input_dim {}",
            batch.dim, spec.input_dim
        )));
    }
    let cols = active_columns(layout, mask)?;
    let n = batch.len() as f64;
    let layers = layers(params);
    let mut grad = vec![0.0; layout.total_len()];
    let mut total = 0.0;
    let mut delta = Vec::new();
    let mut delta_prev = Vec::new();

    for e in 0..batch.len() {
        let label = batch.labels[e];
        let y = layout
            .column_of(label)
            .filter(|k| cols.binary_search(k).is_ok())
            .ok_or(Error::LabelOutsideMask { label })?;
        let (acts, logits) = forward_trace(&layers, spec, batch.row(e));

        let mut m = f64::NEG_INFINITY;
        for &k in &cols {
            if logits[k] > m {
                m = logits[k];
            }
        }
        let mut sum = 0.0;
        for &k in &cols {
            sum += (logits[k] - m).exp();
        }
        total += m + sum.ln() - logits[y];

        delta.clear();
        delta.resize(logits.len(), 0.0);
        for &k in &cols {
            let p = (logits[k] - m).exp() / sum;
            let t = if k == y { 1.0 } else { 0.0 };
            delta[k] = (p - t) / n;
        }

        // Backward through the head and hidden layers.
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &acts[l];
            let is_head = l == layers.len() - 1;
            for o in 0..layer.fan_out {
                let d = delta[o];
                if is_head && d == 0.0 && cols.binary_search(&o).is_err() {
                    continue;
                }
                let row = layer.w_offset + o * layer.fan_in;
                for i in 0..layer.fan_in {
                    grad[row + i] += d * input[i];
                }
                grad[layer.b_offset + o] += d;
            }
            if l == 0 {
                break;
            }
            delta_prev.clear();
            delta_prev.resize(layer.fan_in, 0.0);
            for (row, &d) in layer.w.chunks_exact(layer.fan_in).zip(&delta) {
                for (dp, &w) in delta_prev.iter_mut().zip(row) {
                    *dp += w * d;
                }
            }
            for (dp, &a) in delta_prev.iter_mut().zip(input) {
                *dp *= spec.activation.derivative_from_output(a);
            }
            std::mem::swap(&mut delta, &mut delta_prev);
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((loss, GradientVector::new(layout.clone(), grad)?))
}

/// Gradients of each example's own cross-entropy, one per example.
pub fn per_example_grads(
    params: &ParamVector,
    batch: Batch<'_>,
    mask: Option<&[ClassId]>,
) -> Result<Vec<GradientVector>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    (0..batch.len())
        .map(|i| loss_and_grad(params, batch.example(i), mask).map(|(_, g)| g))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    /// Mean cross-entropy over the scoped classes.
    pub loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Argmax over the scoped logits (ties to the lowest class id) and mean
/// cross-entropy over the same scope.
pub fn evaluate(params: &ParamVector, data: Batch<'_>, scope: &[ClassId]) -> Result<Evaluation> {
    let layout = params.layout();
    let spec = layout.spec();
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scope.is_empty() {
        return Err(Error::Shape("empty class scope".into()));
    }
    if data.dim != spec.input_dim {
        return Err(Error::Shape(format!(
            "data width {} != input_dim {}",
            data.dim, spec.input_dim
        )));
    }
    let mut scoped: Vec<(ClassId, usize)> = Vec::with_capacity(scope.len());
    for &c in scope {
        let k = layout
            .column_of(c)
            .ok_or_else(|| Error::Layout(format!("scoped class {c} has no head column")))?;
        scoped.push((c, k));
    }
    scoped.sort_unstable();
    scoped.dedup();

    let layers = layers(params);
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    for e in 0..data.len() {
        let label = data.labels[e];
        let (_, logits) = forward_trace(&layers, spec, data.row(e));
        let mut best = scoped[0];
        let mut m = logits[best.1];
        for &(c, k) in &scoped[1..] {
            if logits[k] > m {
                m = logits[k];
                best = (c, k);
            }
        }
        if best.0 == label {
            correct += 1;
        }
        let mut sum = 0.0;
        for &(_, k) in &scoped {
            sum += (logits[k] - m).exp();
        }
        let z_label = scoped
            .iter()
            .find(|&&(c, _)| c == label)
            .map(|&(_, k)| logits[k])
            .ok_or(Error::LabelOutsideMask { label })?;
        total_loss += m + sum.ln() - z_label;
    }
    Ok(Evaluation {
        correct,
        total: data.len(),
        loss: total_loss / data.len() as f64,
    })
}

pub fn evaluate_accuracy(params: &ParamVector, data: Batch<'_>, scope: &[ClassId]) -> Result<f64> {
    evaluate(params, data, scope).map(|e| e.accuracy())
}

/// Penultimate-layer features of one input row (the row itself when the
/// network has no hidden layers).
pub fn features(params: &ParamVector, row: &[f64]) -> Result<Vec<f64>> {
    let spec = params.layout().spec();
    if row.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "row width {} != input_dim {}",
            row.len(),
            spec.input_dim
        )));
    }
    let layers = layers(params);
    let (mut acts, _) = forward_trace(&layers, spec, row);
    Ok(acts.pop().expect("input activation"))
}
