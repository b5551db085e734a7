//! Turning tolerances into encodings: codeword assignment, group pruning and
//! layer-wise uniform bit lengths.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::complexity::{nearest_codeword, ComplexityKind, ComplexityModel, DescentInfo};
use crate::error::{Error, Result};
use crate::nn::{json_error_offset, Layer, Model};

/// Bit length charged for a parameter left at full precision.
pub const FULL_PRECISION_BITS: u32 = 32;
const PRUNED: i64 = -1;
const FULL: i64 = -2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    values: Vec<f64>,
    symbol_bits: Vec<u32>,
}

impl Codebook {
    pub fn new(values: Vec<f64>, symbol_bits: Vec<u32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("codebook is empty".into()));
        }
        if values.len() != symbol_bits.len() {
            return Err(Error::Config(format!(
                "{} codebook values but {} symbol lengths",
                values.len(),
                symbol_bits.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("codebook must be finite and strictly ascending".into()));
        }
        Ok(Self { values, symbol_bits })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn symbol_bits(&self) -> &[u32] {
        &self.symbol_bits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nearest(&self, w: f64) -> usize {
        nearest_codeword(&self.values, w)
    }
}

/// Signed fixed-point grid `m * bound * 2^(1 - bits_max)` for
/// `|m| <= 2^(bits_max - 1)`. A value's symbol length is the smallest `b`
/// whose grid contains it; zero costs no bits.
pub fn fixed_point_codebook(bits_max: u32, bound: f64) -> Result<Codebook> {
    if !(1..=16).contains(&bits_max) {
        return Err(Error::Config(format!("bits_max must be in 1..=16, got {bits_max}")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Config(format!("codebook bound must be positive, got {bound}")));
    }
    let half = 1i64 << (bits_max - 1);
    let step = bound * 2f64.powi(1 - bits_max as i32);
    let mut values = Vec::with_capacity(2 * half as usize + 1);
    let mut bits = Vec::with_capacity(values.capacity());
    for m in -half..=half {
        values.push(m as f64 * step);
        bits.push(if m == 0 {
            0
        } else {
            bits_max.saturating_sub(m.unsigned_abs().trailing_zeros()).max(1)
        });
    }
    Codebook::new(values, bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PolicyKind {
    #[default]
    None,
    PruneGroups,
    LayerUniformBits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPolicy {
    pub kind: PolicyKind,
    pub group_size: usize,
}

impl Default for GroupPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::None,
            group_size: 1,
        }
    }
}

impl GroupPolicy {
    pub fn prune(group_size: usize) -> Self {
        Self {
            kind: PolicyKind::PruneGroups,
            group_size,
        }
    }

    pub fn layer_uniform() -> Self {
        Self {
            kind: PolicyKind::LayerUniformBits,
            group_size: 1,
        }
    }

    /// Flat index groups. Pruning groups are contiguous runs of
    /// `group_size` within each weight matrix and each bias vector (the
    /// last run may be short); layer-wise groups are whole layers.
    pub fn groups(&self, model: &Model) -> Result<Vec<Range<usize>>> {
        match self.kind {
            PolicyKind::None => Ok((0..model.n_params()).map(|i| i..i + 1).collect()),
            PolicyKind::LayerUniformBits => Ok(model.layer_ranges()),
            PolicyKind::PruneGroups => {
                if self.group_size == 0 {
                    return Err(Error::Config("group_size must be positive".into()));
                }
                let mut out = Vec::new();
                for (w, b) in model.block_ranges() {
                    for block in [w, b] {
                        let mut s = block.start;
                        while s < block.end {
                            let e = (s + self.group_size).min(block.end);
                            out.push(s..e);
                            s = e;
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Code(usize),
    Pruned,
    /// Kept at its original value.
    Full,
}

impl Assignment {
    fn to_index(self) -> i64 {
        match self {
            Assignment::Code(j) => j as i64,
            Assignment::Pruned => PRUNED,
            Assignment::Full => FULL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModel {
    model: Model,
    assignment: Vec<Assignment>,
    bits: Vec<u32>,
    codebook: Option<Codebook>,
}

impl EncodedModel {
    /// Every parameter at full precision.
    pub fn identity(model: &Model) -> Self {
        let n = model.n_params();
        Self {
            model: model.clone(),
            assignment: vec![Assignment::Full; n],
            bits: vec![FULL_PRECISION_BITS; n],
            codebook: None,
        }
    }

    /// Builds from per-parameter assignments; code and pruned entries are
    /// decoded over `base`'s values.
    pub fn from_parts(
        base: &Model,
        assignment: Vec<Assignment>,
        bits: Vec<u32>,
        codebook: Option<Codebook>,
    ) -> Result<Self> {
        let n = base.n_params();
        if assignment.len() != n || bits.len() != n {
            return Err(Error::Shape(format!(
                "{n} parameters but {} assignments and {} bit lengths",
                assignment.len(),
                bits.len()
            )));
        }
        let mut w = base.params();
        for (i, a) in assignment.iter().enumerate() {
            match *a {
                Assignment::Code(j) => {
                    let cb = codebook.as_ref().ok_or_else(|| {
                        Error::Shape(format!("parameter {i} refers to a codebook that is absent"))
                    })?;
                    w[i] = *cb.values().get(j).ok_or_else(|| {
                        Error::Shape(format!("parameter {i} uses codeword {j} of {}", cb.len()))
                    })?;
                }
                Assignment::Pruned => w[i] = 0.0,
                Assignment::Full => {}
            }
        }
        Ok(Self {
            model: base.with_params(&w)?,
            assignment,
            bits,
            codebook,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> Vec<f64> {
        self.model.params()
    }

    pub fn assignment(&self) -> &[Assignment] {
        &self.assignment
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }

    pub fn codebook(&self) -> Option<&Codebook> {
        self.codebook.as_ref()
    }

    /// Fraction of parameters equal to zero.
    pub fn sparsity(&self) -> f64 {
        let w = self.model.params();
        w.iter().filter(|v| **v == 0.0).count() as f64 / w.len() as f64
    }

    pub fn mean_bits(&self) -> f64 {
        self.bits.iter().map(|&b| b as f64).sum::<f64>() / self.bits.len() as f64
    }

    pub fn to_json(&self) -> String {
        let doc = CompressedDoc {
            layers: self.model.layers().to_vec(),
            param_bound: self.model.param_bound(),
            assignment: self.assignment.iter().map(|a| a.to_index()).collect(),
            codebook: self.codebook.as_ref().map(|c| c.values.clone()).unwrap_or_default(),
            symbol_bits: self
                .codebook
                .as_ref()
                .map(|c| c.symbol_bits.clone())
                .unwrap_or_default(),
            bits: self.bits.clone(),
            sparsity: self.sparsity(),
            mean_bits: self.mean_bits(),
        };
        serde_json::to_string_pretty(&doc).expect("compressed model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CompressedDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: json_error_offset(text, &e),
            detail: e.to_string(),
        })?;
        let base = Model::new(doc.layers, Some(doc.param_bound))?;
        let codebook = if doc.codebook.is_empty() {
            None
        } else {
            Some(Codebook::new(doc.codebook, doc.symbol_bits)?)
        };
        let assignment = doc
            .assignment
            .iter()
            .enumerate()
            .map(|(i, &a)| match a {
                PRUNED => Ok(Assignment::Pruned),
                FULL => Ok(Assignment::Full),
                j if j >= 0 => Ok(Assignment::Code(j as usize)),
                _ => Err(Error::Shape(format!("parameter {i} has assignment {a}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(&base, assignment, doc.bits, codebook)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CompressedDoc {
    layers: Vec<Layer>,
    param_bound: f64,
    assignment: Vec<i64>,
    codebook: Vec<f64>,
    symbol_bits: Vec<u32>,
    bits: Vec<u32>,
    sparsity: f64,
    mean_bits: f64,
}

/// Reads either a plain model file or a compressed one (decoded).
pub fn load_model_any(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: json_error_offset(&text, &e),
        detail: e.to_string(),
    })?;
    if probe.get("assignment").is_some() {
        Ok(EncodedModel::from_json(&text)?.model)
    } else {
        Model::from_json(&text)
    }
}

fn check_lengths(w0: &[f64], tau: &[f64]) -> Result<()> {
    if w0.len() != tau.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} tolerances",
            w0.len(),
            tau.len()
        )));
    }
    Ok(())
}

/// Codeword per parameter. Starting at the codeword nearest `w0[i]`, walk
/// along the descent sign while the next codeword stays within `tau[i]` and
/// lowers `phi`. For `LogTolerance`, whose cost is the symbol length, the
/// shortest symbol inside the tolerance window wins (nearest on ties).
/// Parameters whose nearest codeword is out of reach stay at full precision.
pub fn optimize_params(
    model: &Model,
    tau: &[f64],
    cm: &ComplexityModel,
    descent: &DescentInfo,
    codebook: &Codebook,
) -> Result<EncodedModel> {
    let w0 = model.params();
    check_lengths(&w0, tau)?;
    if descent.len() != w0.len() {
        return Err(Error::Shape("descent info does not match the model".into()));
    }
    let c = codebook.values();
    let mut assignment = Vec::with_capacity(w0.len());
    let mut bits = Vec::with_capacity(w0.len());
    for (i, (&w, &t)) in w0.iter().zip(tau).enumerate() {
        let admissible = |j: usize| (c[j] - w).abs() <= t;
        let start = codebook.nearest(w);
        if !admissible(start) {
            assignment.push(Assignment::Full);
            bits.push(FULL_PRECISION_BITS);
            continue;
        }
        let pick = if cm.kind() == ComplexityKind::LogTolerance {
            let lo = c.partition_point(|&v| v < w - t);
            let hi = c.partition_point(|&v| v <= w + t);
            (lo..hi)
                .filter(|&j| admissible(j))
                .min_by(|&a, &b| {
                    codebook.symbol_bits()[a]
                        .cmp(&codebook.symbol_bits()[b])
                        .then((c[a] - w).abs().total_cmp(&(c[b] - w).abs()))
                })
                .unwrap_or(start)
        } else {
            let cost = |j: usize| cm.param_cost(i, c[j]).unwrap_or(0.0);
            let mut cur = start;
            loop {
                let next = if descent.signs[i] > 0.0 {
                    cur + 1
                } else if cur > 0 {
                    cur - 1
                } else {
                    break;
                };
                if next >= c.len() || !admissible(next) || cost(next) >= cost(cur) {
                    break;
                }
                cur = next;
            }
            cur
        };
        assignment.push(Assignment::Code(pick));
        bits.push(codebook.symbol_bits()[pick]);
    }
    EncodedModel::from_parts(model, assignment, bits, Some(codebook.clone()))
}

/// Zeroes every group whose members all satisfy `|w| <= tau`; the rest keep
/// their values at full precision.
pub fn prune_with_tolerances(model: &Model, tau: &[f64], policy: &GroupPolicy) -> Result<EncodedModel> {
    if policy.kind != PolicyKind::PruneGroups {
        return Err(Error::Config("pruning needs a PruneGroups policy".into()));
    }
    let w0 = model.params();
    check_lengths(&w0, tau)?;
    let mut assignment = vec![Assignment::Full; w0.len()];
    let mut bits = vec![FULL_PRECISION_BITS; w0.len()];
    for g in policy.groups(model)? {
        if g.clone().all(|i| w0[i].abs() <= tau[i]) {
            for i in g {
                assignment[i] = Assignment::Pruned;
                bits[i] = 0;
            }
        }
    }
    EncodedModel::from_parts(model, assignment, bits, None)
}

/// Gives every layer one bit length: the longest symbol among its encoded
/// members. Each member (encoded or not) moves to the codeword nearest its
/// original value among those representable in that length and inside its
/// tolerance; members with no such codeword stay at full precision.
pub fn quantize_layerwise(
    enc: &EncodedModel,
    original: &Model,
    tau: &[f64],
    codebook: &Codebook,
) -> Result<EncodedModel> {
    let w0 = original.params();
    check_lengths(&w0, tau)?;
    if enc.assignment.len() != w0.len() {
        return Err(Error::Shape("encoding does not match the model".into()));
    }
    let c = codebook.values();
    let sb = codebook.symbol_bits();
    let mut assignment = enc.assignment.clone();
    let mut bits = enc.bits.clone();
    for layer in original.layer_ranges() {
        let target = layer
            .clone()
            .filter(|&i| matches!(enc.assignment[i], Assignment::Code(_)))
            .map(|i| enc.bits[i])
            .max();
        let Some(target) = target else { continue };
        for i in layer {
            let (w, t) = (w0[i], tau[i]);
            let lo = c.partition_point(|&v| v < w - t);
            let hi = c.partition_point(|&v| v <= w + t);
            let best = (lo..hi)
                .filter(|&j| sb[j] <= target && (c[j] - w).abs() <= t)
                .min_by(|&a, &b| (c[a] - w).abs().total_cmp(&(c[b] - w).abs()));
            match best {
                Some(j) => {
                    assignment[i] = Assignment::Code(j);
                    bits[i] = target;
                }
                None => {
                    assignment[i] = Assignment::Full;
                    bits[i] = FULL_PRECISION_BITS;
                }
            }
        }
    }
    EncodedModel::from_parts(original, assignment, bits, Some(codebook.clone()))
}
