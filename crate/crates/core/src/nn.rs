//! Dense feed-forward network: inference, cross-entropy loss and exact backprop.
//!
//! Each layer computes `z = W a + b` with `W` stored row-major as
//! `rows x cols` (`rows` outputs, `cols` inputs). Hidden layers apply their
//! activation to `z`; the last layer's `z` is the logit vector. A last layer
//! with a single unit is a binary head whose logits are `[0, z]`, so its
//! class-1 posterior is `sigmoid(z)`.
//!
//! Parameters are flattened layer by layer, weights (row-major) before biases.
//! Every index into a gradient, tolerance or sign vector uses that order.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Samples per parallel work unit. Partial sums are combined in chunk order so
/// results do not depend on thread scheduling.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    /// Only valid on the output layer.
    Softmax,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity | Activation::Softmax => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity | Activation::Softmax => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(dot + self.b[r]);
        }
    }
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Matrix,
    pub posteriors: Matrix,
    /// Activations feeding the last layer.
    pub embeddings: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mean_loss: f64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample_loss: Option<Vec<f64>>,
}

/// Training objective used by [`loss_with`] and [`gradient_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    CrossEntropy,
    /// `sum_j (out_j - t_j)^2` on the activated output. The target is the
    /// label value for single-unit heads and one-hot otherwise.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    param_bound: f64,
}

impl Model {
    /// Builds a validated model. Without an explicit bound, `param_bound` is
    /// the largest parameter magnitude (1.0 for an all-zero model).
    pub fn new(layers: Vec<Layer>, param_bound: Option<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::Shape(format!("layer {k} has a zero dimension")));
            }
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::Shape(format!(
                    "layer {k}: expected {}x{} weights and {} biases, got {} and {}",
                    l.rows,
                    l.cols,
                    l.rows,
                    l.w.len(),
                    l.b.len()
                )));
            }
            if k + 1 < layers.len() && l.activation == Activation::Softmax {
                return Err(Error::Shape(format!(
                    "layer {k}: softmax is only allowed on the output layer"
                )));
            }
            if k > 0 && layers[k - 1].rows != l.cols {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} produces {}",
                    l.cols,
                    k - 1,
                    layers[k - 1].rows
                )));
            }
        }
        let mut max_abs: f64 = 0.0;
        for (i, v) in layers.iter().flat_map(|l| l.w.iter().chain(&l.b)).enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    index: i,
                    detail: format!("parameter value {v}"),
                });
            }
            max_abs = max_abs.max(v.abs());
        }
        let bound = match param_bound {
            Some(b) => b,
            None if max_abs > 0.0 => max_abs,
            None => 1.0,
        };
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::Config(format!("param_bound must be positive, got {bound}")));
        }
        if max_abs > bound {
            return Err(Error::Config(format!(
                "parameter magnitude {max_abs} exceeds param_bound {bound}"
            )));
        }
        Ok(Self {
            layers,
            param_bound: bound,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_bound(&self) -> f64 {
        self.param_bound
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    /// Width of the logit vector (2 for a single-unit binary head).
    pub fn n_outputs(&self) -> usize {
        match self.layers.last().map(|l| l.rows) {
            Some(1) => 2,
            Some(r) => r,
            None => 0,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map(|l| l.cols).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Flat index range covered by each layer (weights then biases).
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = start..start + l.n_params();
                start = r.end;
                r
            })
            .collect()
    }

    /// Flat index ranges of each layer's weight block and bias block.
    pub fn block_ranges(&self) -> Vec<(Range<usize>, Range<usize>)> {
        self.layer_ranges()
            .into_iter()
            .zip(&self.layers)
            .map(|(r, l)| {
                let w_end = r.start + l.w.len();
                (r.start..w_end, w_end..r.end)
            })
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Overwrites every parameter from a flat vector.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Returns a copy carrying `flat` as its parameters and the same bound.
    pub fn with_params(&self, flat: &[f64]) -> Result<Model> {
        let mut m = self.clone();
        m.set_params(flat)?;
        Ok(m)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {width} does not match model input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyInput("dataset has no samples".into()));
        }
        self.check_width(data.dim())?;
        if data.n_classes() != self.n_outputs() {
            return Err(Error::Shape(format!(
                "dataset has {} classes but the model emits {} logits",
                data.n_classes(),
                self.n_outputs()
            )));
        }
        Ok(())
    }

    /// Runs one sample, keeping every layer input plus the final pre-activation.
    /// `acts[k]` is the input of layer `k`; the returned vector is `z` of the
    /// last layer.
    fn trace(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> Vec<f64> {
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&acts[k], &mut z);
            if k < last {
                let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
                acts.push(a);
            }
        }
        z
    }

    fn logits_from_z(&self, z: &[f64]) -> Vec<f64> {
        if z.len() == 1 {
            vec![0.0, z[0]]
        } else {
            z.to_vec()
        }
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Forward> {
        self.check_width(batch.cols)?;
        let n_out = self.n_outputs();
        let emb = self.embedding_dim();
        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..batch.rows)
            .into_par_iter()
            .map(|i| {
                let mut acts = Vec::new();
                let z = self.trace(batch.row(i), &mut acts);
                let e = acts.pop().unwrap_or_default();
                (self.logits_from_z(&z), e)
            })
            .collect();
        let mut logits = Vec::with_capacity(batch.rows * n_out);
        let mut posteriors = Vec::with_capacity(batch.rows * n_out);
        let mut embeddings = Vec::with_capacity(batch.rows * emb);
        for (l, e) in per_sample {
            posteriors.extend(softmax(&l));
            logits.extend(l);
            embeddings.extend(e);
        }
        Ok(Forward {
            logits: Matrix::new(batch.rows, n_out, logits)?,
            posteriors: Matrix::new(batch.rows, n_out, posteriors)?,
            embeddings: Matrix::new(batch.rows, emb, embeddings)?,
        })
    }

    /// Forward pass over every sample of a dataset.
    pub fn forward_dataset(&self, data: &Dataset) -> Result<Forward> {
        self.forward(&Matrix::new(data.len(), data.dim(), data.features().to_vec())?)
    }

    /// Class posteriors of every sample, without the embedding copy.
    pub fn posteriors(&self, data: &Dataset) -> Result<Matrix> {
        self.check_width(data.dim())?;
        let n_out = self.n_outputs();
        let rows: Vec<Vec<f64>> = (0..data.len())
            .into_par_iter()
            .with_min_len(CHUNK)
            .map_init(Vec::new, |acts, i| {
                let z = self.trace(data.row(i), acts);
                softmax(&self.logits_from_z(&z))
            })
            .collect();
        Matrix::new(data.len(), n_out, rows.concat())
    }

    fn head_output(&self, z: &[f64]) -> Vec<f64> {
        let act = self.layers[self.layers.len() - 1].activation;
        if act == Activation::Softmax && z.len() > 1 {
            softmax(z)
        } else {
            z.iter().map(|&v| act.apply(v)).collect()
        }
    }

    fn sample_loss(&self, z: &[f64], label: usize, objective: Objective) -> f64 {
        match objective {
            Objective::CrossEntropy => {
                let l = self.logits_from_z(z);
                log_sum_exp(&l) - l[label]
            }
            Objective::SquaredError => {
                let out = self.head_output(z);
                out.iter()
                    .enumerate()
                    .map(|(j, &o)| {
                        let t = target(out.len(), j, label);
                        (o - t) * (o - t)
                    })
                    .sum()
            }
        }
    }

    /// dL/dz for the last layer.
    fn output_delta(&self, z: &[f64], label: usize, objective: Objective) -> Vec<f64> {
        match objective {
            Objective::CrossEntropy => {
                if z.len() == 1 {
                    vec![sigmoid(z[0]) - label as f64]
                } else {
                    let mut p = softmax(z);
                    p[label] -= 1.0;
                    p
                }
            }
            Objective::SquaredError => {
                let act = self.layers[self.layers.len() - 1].activation;
                let out = self.head_output(z);
                let d_out: Vec<f64> = out
                    .iter()
                    .enumerate()
                    .map(|(j, &o)| 2.0 * (o - target(out.len(), j, label)))
                    .collect();
                if act == Activation::Softmax && z.len() > 1 {
                    let dot: f64 = d_out.iter().zip(&out).map(|(d, p)| d * p).sum();
                    out.iter().zip(&d_out).map(|(p, d)| p * (d - dot)).collect()
                } else {
                    out.iter()
                        .zip(&d_out)
                        .map(|(&o, &d)| d * act.derivative_from_output(o))
                        .collect()
                }
            }
        }
    }

    /// Adds one sample's parameter gradient into `grad`; returns its loss.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        label: usize,
        objective: Objective,
        offsets: &[usize],
        acts: &mut Vec<Vec<f64>>,
        grad: &mut [f64],
    ) -> f64 {
        let z = self.trace(x, acts);
        let loss = self.sample_loss(&z, label, objective);
        let mut delta = self.output_delta(&z, label, objective);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            let base = offsets[k];
            for r in 0..layer.rows {
                let d = delta[r];
                if d != 0.0 {
                    let g = &mut grad[base + r * layer.cols..base + (r + 1) * layer.cols];
                    for (gj, xj) in g.iter_mut().zip(input) {
                        *gj += d * xj;
                    }
                }
                grad[base + layer.w.len() + r] += d;
            }
            if k > 0 {
                let prev_act = self.layers[k - 1].activation;
                let mut next = vec![0.0; layer.cols];
                for (&d, row) in delta.iter().zip(layer.w.chunks(layer.cols)) {
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, &a) in next.iter_mut().zip(input) {
                    *n *= prev_act.derivative_from_output(a);
                }
                delta = next;
            }
        }
        loss
    }
}

fn target(width: usize, j: usize, label: usize) -> f64 {
    if width == 1 {
        label as f64
    } else if j == label {
        1.0
    } else {
        0.0
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and accuracy over a dataset.
pub fn loss(model: &Model, data: &Dataset) -> Result<LossReport> {
    loss_with(model, data, Objective::CrossEntropy)
}

pub fn loss_with(model: &Model, data: &Dataset, objective: Objective) -> Result<LossReport> {
    model.check_dataset(data)?;
    let per: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .with_min_len(CHUNK)
        .map(|i| {
            let mut acts = Vec::new();
            let z = model.trace(data.row(i), &mut acts);
            let label = data.labels()[i];
            let correct = argmax(&model.logits_from_z(&z)) == label;
            (model.sample_loss(&z, label, objective), correct)
        })
        .collect();
    let n = per.len() as f64;
    let per_sample: Vec<f64> = per.iter().map(|p| p.0).collect();
    let mean_loss = per_sample.iter().sum::<f64>() / n;
    let accuracy = per.iter().filter(|p| p.1).count() as f64 / n;
    Ok(LossReport {
        mean_loss,
        accuracy,
        per_sample_loss: Some(per_sample),
    })
}

/// Exact gradient of the mean cross-entropy, in flattened parameter order.
pub fn gradient(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    gradient_with(model, data, Objective::CrossEntropy)
}

pub fn gradient_with(model: &Model, data: &Dataset, objective: Objective) -> Result<Vec<f64>> {
    model.check_dataset(data)?;
    let n_params = model.n_params();
    let offsets: Vec<usize> = model.layer_ranges().iter().map(|r| r.start).collect();
    let n_chunks = data.len().div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut grad = vec![0.0; n_params];
            let mut acts = Vec::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(data.len()) {
                model.accumulate_gradient(
                    data.row(i),
                    data.labels()[i],
                    objective,
                    &offsets,
                    &mut acts,
                    &mut grad,
                );
            }
            grad
        })
        .collect();
    let mut total = vec![0.0; n_params];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let n = data.len() as f64;
    for (i, g) in total.iter_mut().enumerate() {
        *g /= n;
        if !g.is_finite() {
            return Err(Error::Numeric {
                index: i,
                detail: format!("gradient component is {g}"),
            });
        }
    }
    Ok(total)
}

/// Central-difference estimate of the cross-entropy gradient.
pub fn finite_diff_gradient(model: &Model, data: &Dataset, h: f64) -> Result<Vec<f64>> {
    finite_diff_gradient_with(model, data, h, Objective::CrossEntropy)
}

pub fn finite_diff_gradient_with(
    model: &Model,
    data: &Dataset,
    h: f64,
    objective: Objective,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step h must be positive, got {h}")));
    }
    model.check_dataset(data)?;
    let base = model.params();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut w = base.clone();
    for i in 0..base.len() {
        w[i] = base[i] + h;
        probe.set_params(&w)?;
        let up = loss_with(&probe, data, objective)?.mean_loss;
        w[i] = base[i] - h;
        probe.set_params(&w)?;
        let down = loss_with(&probe, data, objective)?.mean_loss;
        w[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param_bound: Option<f64>,
}

pub(crate) fn json_error_offset(text: &str, e: &serde_json::Error) -> usize {
    let line = e.line().max(1);
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + e.column().saturating_sub(1)).min(text.len())
}

impl Model {
    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            layers: self.layers.clone(),
            param_bound: Some(self.param_bound),
        };
        serde_json::to_string_pretty(&doc).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: json_error_offset(text, &e),
            detail: e.to_string(),
        })?;
        Model::new(doc.layers, doc.param_bound)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> Model {
        Model::new(
            vec![Layer {
                rows: 2,
                cols: 2,
                activation: Activation::Identity,
                w: vec![1.0, 0.0, 0.0, 1.0],
                b: vec![0.0, 0.0],
            }],
            None,
        )
        .unwrap()
    }

    fn sigmoid_unit(w: f64, b: f64) -> Model {
        Model::new(
            vec![Layer {
                rows: 1,
                cols: 1,
                activation: Activation::Sigmoid,
                w: vec![w],
                b: vec![b],
            }],
            Some(10.0),
        )
        .unwrap()
    }

    #[test]
    fn identity_forward_passes_inputs_through() {
        let f = identity2()
            .forward(&Matrix::new(1, 2, vec![3.0, 5.0]).unwrap())
            .unwrap();
        assert_eq!(f.logits.data, vec![3.0, 5.0]);
        assert_eq!(f.embeddings.data, vec![3.0, 5.0]);
    }

    #[test]
    fn zero_logits_give_uniform_posterior() {
        let f = identity2()
            .forward(&Matrix::new(1, 2, vec![0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(f.posteriors.data, vec![0.5, 0.5]);
    }

    #[test]
    fn sigmoid_unit_at_zero() {
        let f = sigmoid_unit(1.0, 0.0)
            .forward(&Matrix::new(1, 1, vec![0.0]).unwrap())
            .unwrap();
        assert_eq!(f.posteriors.data[1], 0.5);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let r = identity2().forward(&Matrix::new(1, 3, vec![0.0; 3]).unwrap());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_posterior_loss_is_ln2() {
        let d = Dataset::new(vec![0.0, 0.0], vec![1], 2, 2).unwrap();
        let r = loss(&identity2(), &d).unwrap();
        assert!((r.mean_loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        // logits [0, 800] -> posterior is one-hot in f64
        let d = Dataset::new(vec![0.0, 800.0], vec![1], 2, 2).unwrap();
        let r = loss(&identity2(), &d).unwrap();
        assert_eq!(r.per_sample_loss.as_ref().unwrap()[0], 0.0);
        assert_eq!(r.accuracy, 1.0);
        let g = gradient(&identity2(), &d).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn mean_loss_matches_per_sample() {
        let d = Dataset::new(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0], vec![0, 1, 1], 2, 2).unwrap();
        let r = loss(&identity2(), &d).unwrap();
        let per = r.per_sample_loss.unwrap();
        assert!((per.iter().sum::<f64>() / 3.0 - r.mean_loss).abs() < 1e-15);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = Dataset::new(vec![], vec![], 2, 2).unwrap();
        assert!(matches!(loss(&identity2(), &d), Err(Error::EmptyInput(_))));
        assert!(matches!(gradient(&identity2(), &d), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn squared_error_linear_unit() {
        let m = Model::new(
            vec![Layer {
                rows: 1,
                cols: 1,
                activation: Activation::Identity,
                w: vec![1.0],
                b: vec![0.0],
            }],
            None,
        )
        .unwrap();
        let d = Dataset::new(vec![2.0], vec![0], 1, 2).unwrap();
        let g = gradient_with(&m, &d, Objective::SquaredError).unwrap();
        assert_eq!(g[0], 8.0);
        assert_eq!(g[1], 4.0);
    }

    #[test]
    fn constant_loss_has_zero_fd_gradient() {
        // all-zero inputs and identity weights: loss only depends on biases
        let d = Dataset::new(vec![0.0, 0.0], vec![0], 2, 2).unwrap();
        let fd = finite_diff_gradient(&identity2(), &d, 1e-5).unwrap();
        assert_eq!(&fd[..4], &[0.0; 4]);
    }

    #[test]
    fn flatten_order_is_weights_then_biases() {
        let m = Model::new(
            vec![
                Layer {
                    rows: 2,
                    cols: 1,
                    activation: Activation::Relu,
                    w: vec![1.0, 2.0],
                    b: vec![3.0, 4.0],
                },
                Layer {
                    rows: 1,
                    cols: 2,
                    activation: Activation::Sigmoid,
                    w: vec![5.0, 6.0],
                    b: vec![7.0],
                },
            ],
            None,
        )
        .unwrap();
        assert_eq!(m.params(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(m.layer_ranges(), vec![0..4, 4..7]);
        assert_eq!(m.block_ranges()[1], (4..6, 6..7));
        assert_eq!(m.param_bound(), 7.0);
    }

    #[test]
    fn validation_catches_broken_chains() {
        let l0 = Layer {
            rows: 3,
            cols: 2,
            activation: Activation::Relu,
            w: vec![0.0; 6],
            b: vec![0.0; 3],
        };
        let l1 = Layer {
            rows: 1,
            cols: 2,
            activation: Activation::Sigmoid,
            w: vec![0.0; 2],
            b: vec![0.0],
        };
        assert!(matches!(Model::new(vec![l0, l1], None), Err(Error::Shape(_))));
    }

    #[test]
    fn bound_must_cover_parameters() {
        let r = Model::new(
            vec![Layer {
                rows: 1,
                cols: 1,
                activation: Activation::Sigmoid,
                w: vec![2.0],
                b: vec![0.0],
            }],
            Some(1.0),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = Model::new(
            vec![Layer {
                rows: 1,
                cols: 3,
                activation: Activation::Sigmoid,
                w: vec![0.1, -1.0 / 3.0, 2.0f64.sqrt()],
                b: vec![std::f64::consts::PI / 7.0],
            }],
            None,
        )
        .unwrap();
        let back = Model::from_json(&m.to_json()).unwrap();
        assert_eq!(
            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(m, back);
    }

    #[test]
    fn malformed_json_reports_offset() {
        let text = sigmoid_unit(0.5, 0.0).to_json();
        let cut = &text[..text.len() / 2];
        match Model::from_json(cut) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_activation_is_parse_error() {
        let text = sigmoid_unit(0.5, 0.0).to_json().replace("sigmoid", "swish");
        let at = text.find("swish").unwrap();
        match Model::from_json(&text) {
            Err(Error::Parse { offset, .. }) => assert!(offset >= at && offset <= at + 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
