//! The compression loop: tolerances on a selected batch, encoding, and an
//! exact loss check against the current bound `ell_bar`, with a trust region
//! `delta` on the tolerances and a geometric ladder on `ell_bar`.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complexity::{fd_hessian_diagonal, ComplexityKind, ComplexityModel};
use crate::dataset::Dataset;
use crate::encoder::{
    fixed_point_codebook, optimize_params, prune_with_tolerances, quantize_layerwise, Codebook,
    EncodedModel, GroupPolicy, PolicyKind, FULL_PRECISION_BITS,
};
use crate::error::{Error, Result};
use crate::nn::{self, json_error_offset, Model};
use crate::qbc::{build_similarity_index, draw_batch, rank_against, QbcRanking};
use crate::solver::{self, ToleranceProblem, DEFAULT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Active,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    /// Closed form for the kind.
    #[default]
    Auto,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    #[default]
    Constant,
    FiniteDifference,
}

/// Loop settings. `None` entries take defaults scaled by the parameter
/// bound `w_bar` or the initial loss `L0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    pub sigma: f64,
    pub sigma_max: f64,
    /// Default `0.01 * w_bar`.
    pub delta_init: Option<f64>,
    /// Default `0.1 * w_bar`.
    pub delta_max: Option<f64>,
    /// Default `1e-3 * L0`.
    pub eps: Option<f64>,
    /// Default `1e-8 * w_bar`.
    pub eps_delta: Option<f64>,
    pub max_iters: usize,
    pub complexity: ComplexityKind,
    pub hessian: HessianMode,
    pub codebook_bits: u32,
    pub policy: GroupPolicy,
    pub selection: SelectionMode,
    pub pool_fraction: f64,
    pub batch_size: usize,
    /// Re-rank the pool every this many iterations.
    pub rerank_stride: usize,
    pub solver: SolverChoice,
    pub eps_lambda: f64,
    pub eps_tau: f64,
    pub seed: u64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            sigma: 1.05,
            sigma_max: 1.5,
            delta_init: None,
            delta_max: None,
            eps: None,
            eps_delta: None,
            max_iters: 200,
            complexity: ComplexityKind::LogTolerance,
            hessian: HessianMode::Constant,
            codebook_bits: 8,
            policy: GroupPolicy::default(),
            selection: SelectionMode::Active,
            pool_fraction: 0.01,
            batch_size: 32,
            rerank_stride: 1,
            solver: SolverChoice::Auto,
            eps_lambda: DEFAULT_EPS,
            eps_tau: DEFAULT_EPS,
            seed: 0,
        }
    }
}

/// The numeric schedule after filling in defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub sigma: f64,
    pub sigma_max: f64,
    pub delta_init: f64,
    pub delta_max: f64,
    pub eps: f64,
    pub eps_delta: f64,
    pub max_iters: usize,
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.sigma > 1.0 && self.sigma_max > self.sigma && self.sigma_max.is_finite()) {
            return bad("need sigma_max > sigma > 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction <= 1.0) {
            return bad("pool_fraction must be in (0, 1]");
        }
        if self.batch_size == 0 || self.rerank_stride == 0 {
            return bad("batch_size and rerank_stride must be positive");
        }
        if !(1..=16).contains(&self.codebook_bits) {
            return bad("codebook_bits must be in 1..=16");
        }
        if self.policy.kind == PolicyKind::PruneGroups && self.policy.group_size == 0 {
            return bad("group_size must be positive");
        }
        if !(self.eps_lambda > 0.0 && self.eps_tau > 0.0) {
            return bad("solver tolerances must be positive");
        }
        for (name, v) in [
            ("delta_init", self.delta_init),
            ("delta_max", self.delta_max),
            ("eps", self.eps),
            ("eps_delta", self.eps_delta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self, param_bound: f64, initial_loss: f64) -> Result<Schedule> {
        self.validate()?;
        let s = Schedule {
            sigma: self.sigma,
            sigma_max: self.sigma_max,
            delta_init: self.delta_init.unwrap_or(0.01 * param_bound),
            delta_max: self.delta_max.unwrap_or(0.1 * param_bound),
            eps: self.eps.unwrap_or((1e-3 * initial_loss).max(f64::MIN_POSITIVE)),
            eps_delta: self.eps_delta.unwrap_or(1e-8 * param_bound),
            max_iters: self.max_iters,
        };
        if !(s.delta_max > s.delta_init) {
            return Err(Error::Config(format!(
                "need delta_max > delta_init, got {} and {}",
                s.delta_max, s.delta_init
            )));
        }
        Ok(s)
    }
}

/// A parameter's value and symbol length after an accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamChange {
    pub index: usize,
    pub value: f64,
    pub bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Bound the candidate was tested against.
    pub ell_bar: f64,
    /// Trust region used for this iteration's tolerances.
    pub delta: f64,
    pub loss_before: f64,
    /// Full-set loss of the candidate.
    pub loss_after: f64,
    pub accepted: bool,
    /// Sparsity, mean bits and accuracy of the model kept after the decision.
    pub sparsity: f64,
    pub mean_bits: f64,
    pub accuracy: f64,
    pub lambda: Option<f64>,
    pub batch: Vec<usize>,
    pub changes: Vec<ParamChange>,
}

/// Per-parameter cost used for the importance counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: ComplexityKind,
    pub codebook: Option<Vec<f64>>,
    pub hessian_diag: Option<Vec<f64>>,
}

impl CostModel {
    fn complexity(&self) -> Result<ComplexityModel> {
        ComplexityModel::from_parts(self.kind, self.codebook.clone(), self.hessian_diag.clone())
    }

    /// `phi` of the parameter; symbol length for `LogTolerance`.
    pub fn costs(&self, values: &[f64], bits: &[u32]) -> Result<Vec<f64>> {
        let cm = self.complexity()?;
        Ok(values
            .iter()
            .zip(bits)
            .enumerate()
            .map(|(i, (&w, &b))| cm.param_cost(i, w).unwrap_or(b as f64))
            .collect())
    }
}

fn rho<'a>(prev: &'a [f64], cur: &'a [f64]) -> impl Iterator<Item = u64> + 'a {
    prev.iter()
        .zip(cur)
        .map(|(p, c)| u64::from(*c < *p || *c == 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRun {
    pub config: DriverConfig,
    pub schedule: Schedule,
    pub cost_model: CostModel,
    pub initial_params: Vec<f64>,
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub iterations: Vec<IterationRecord>,
    /// `sum_k rho(w_i^k)` maintained during the run.
    pub rho_sum: Vec<u64>,
    #[serde(skip)]
    pub final_model: Option<EncodedModel>,
}

/// `K_eff / sum_k rho`, `+inf` where the parameter was never reduced.
pub fn importance_from(rho_sum: &[u64], k_eff: usize) -> Vec<f64> {
    rho_sum
        .iter()
        .map(|&s| {
            if s == 0 {
                f64::INFINITY
            } else {
                k_eff as f64 / s as f64
            }
        })
        .collect()
}

impl CompressionRun {
    /// Importance from the counters kept during the run.
    pub fn importance(&self) -> Vec<f64> {
        importance_from(&self.rho_sum, self.iterations.len())
    }

    /// Recomputes the counters by replaying the logged parameter changes.
    pub fn replay_rho(&self) -> Result<Vec<u64>> {
        let mut values = self.initial_params.clone();
        let mut bits = vec![FULL_PRECISION_BITS; values.len()];
        let mut prev = self.cost_model.costs(&values, &bits)?;
        let mut sums = vec![0u64; values.len()];
        for it in &self.iterations {
            for c in &it.changes {
                let slot = values.get_mut(c.index).ok_or_else(|| {
                    Error::Shape(format!("logged change to parameter {} out of range", c.index))
                })?;
                *slot = c.value;
                bits[c.index] = c.bits;
            }
            let cur = self.cost_model.costs(&values, &bits)?;
            for (s, r) in sums.iter_mut().zip(rho(&prev, &cur)) {
                *s += r;
            }
            prev = cur;
        }
        Ok(sums)
    }

    pub fn replay_importance(&self) -> Result<Vec<f64>> {
        Ok(importance_from(&self.replay_rho()?, self.iterations.len()))
    }

    /// Final parameters rebuilt from the initial ones and the change log.
    pub fn replay_params(&self) -> Vec<f64> {
        let mut values = self.initial_params.clone();
        for c in self.iterations.iter().flat_map(|it| &it.changes) {
            values[c.index] = c.value;
        }
        values
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run log serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: json_error_offset(text, &e),
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn build_complexity(cfg: &DriverConfig, model: &Model, data: &Dataset, codebook: &Codebook) -> Result<ComplexityModel> {
    match cfg.complexity {
        ComplexityKind::LogTolerance => Ok(ComplexityModel::log_tolerance()),
        ComplexityKind::MagnitudePrune => Ok(ComplexityModel::magnitude_prune()),
        ComplexityKind::QuadraticToCodeword => {
            let h = match cfg.hessian {
                HessianMode::Constant => vec![1.0; model.n_params()],
                HessianMode::FiniteDifference => {
                    fd_hessian_diagonal(model, data, 1e-4 * model.param_bound())?
                }
            };
            ComplexityModel::quadratic_to_codeword(codebook.values().to_vec(), h)
        }
    }
}

fn encode(
    cfg: &DriverConfig,
    current: &Model,
    tau: &[f64],
    cm: &ComplexityModel,
    descent: &crate::complexity::DescentInfo,
    codebook: &Codebook,
) -> Result<EncodedModel> {
    match cfg.policy.kind {
        PolicyKind::None => optimize_params(current, tau, cm, descent, codebook),
        PolicyKind::LayerUniformBits => {
            let enc = optimize_params(current, tau, cm, descent, codebook)?;
            quantize_layerwise(&enc, current, tau, codebook)
        }
        PolicyKind::PruneGroups => prune_with_tolerances(current, tau, &cfg.policy),
    }
}

fn diff(before: &EncodedModel, after: &EncodedModel) -> Vec<ParamChange> {
    let (a, b) = (before.params(), after.params());
    (0..a.len())
        .filter(|&i| a[i].to_bits() != b[i].to_bits() || before.bits()[i] != after.bits()[i])
        .map(|i| ParamChange {
            index: i,
            value: b[i],
            bits: after.bits()[i],
        })
        .collect()
}

pub fn run(model: &Model, data: &Dataset, cfg: &DriverConfig) -> Result<CompressionRun> {
    let start = nn::loss(model, data)?;
    let l0 = start.mean_loss;
    let bound = model.param_bound();
    let sched = cfg.schedule(bound, l0)?;
    let codebook = fixed_point_codebook(cfg.codebook_bits, bound)?;
    let cm = build_complexity(cfg, model, data, &codebook)?;
    let cost_model = CostModel {
        kind: cm.kind(),
        codebook: cm.codebook().map(<[f64]>::to_vec),
        hessian_diag: cm.hessian_diag().map(<[f64]>::to_vec),
    };
    let index = match cfg.selection {
        SelectionMode::Active => Some((build_similarity_index(model, data)?, model.posteriors(data)?)),
        SelectionMode::Random => None,
    };
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut current = EncodedModel::identity(model);
    let mut loss_cur = l0;
    let mut acc_cur = start.accuracy;
    let mut ell = l0;
    let mut delta = sched.delta_init;
    let mut costs = cost_model.costs(&current.params(), current.bits())?;
    let mut rho_sum = vec![0u64; costs.len()];
    let mut iterations = Vec::new();
    let mut ranking: Option<QbcRanking> = None;
    let mut k = 0;

    while ell <= sched.sigma_max * l0 && delta > sched.eps_delta && k < sched.max_iters {
        let batch_seed = seeds.next_u64();
        let headroom = ell - loss_cur;
        let mut record = IterationRecord {
            k,
            ell_bar: ell,
            delta,
            loss_before: loss_cur,
            loss_after: loss_cur,
            accepted: true,
            sparsity: current.sparsity(),
            mean_bits: current.mean_bits(),
            accuracy: acc_cur,
            lambda: None,
            batch: Vec::new(),
            changes: Vec::new(),
        };
        if headroom <= sched.eps {
            ell *= sched.sigma;
        } else {
            let step = (|| -> Result<(EncodedModel, nn::LossReport, f64, Vec<usize>)> {
                let r = match &index {
                    Some((idx, reference)) => {
                        if ranking.is_none() || k % cfg.rerank_stride == 0 {
                            ranking = Some(rank_against(
                                reference,
                                current.model(),
                                data,
                                idx,
                                cfg.pool_fraction,
                            )?);
                        }
                        ranking.as_ref().expect("ranking was just built")
                    }
                    None => ranking.get_or_insert_with(|| QbcRanking::uniform(data.len())),
                };
                let batch = draw_batch(r, cfg.batch_size, batch_seed)?;
                let sub = data.subset(&batch)?;
                let g: Vec<f64> = nn::gradient(current.model(), &sub)?
                    .into_iter()
                    .map(f64::abs)
                    .collect();
                let w = current.params();
                let descent = cm.descent_info(&w)?;
                let mut problem = ToleranceProblem::new(&g, headroom, &cm, &descent, delta.min(bound));
                problem.eps_lambda = cfg.eps_lambda;
                problem.eps_tau = cfg.eps_tau;
                let tol = match cfg.solver {
                    SolverChoice::Auto => solver::solve(&problem)?,
                    SolverChoice::General => solver::solve_general(&problem)?,
                };
                let cand = encode(cfg, current.model(), &tol.tau, &cm, &descent, &codebook)?;
                let report = nn::loss(cand.model(), data)?;
                Ok((cand, report, tol.lambda, batch))
            })();
            let (cand, report, lambda, batch) = step.map_err(|e| e.at_iteration(k))?;
            record.loss_after = report.mean_loss;
            record.lambda = Some(lambda);
            record.batch = batch;
            if report.mean_loss > ell {
                record.accepted = false;
                delta *= 0.5;
            } else {
                delta = (2.0 * delta).min(sched.delta_max);
                record.changes = diff(&current, &cand);
                current = cand;
                loss_cur = report.mean_loss;
                acc_cur = report.accuracy;
            }
            if (ell - report.mean_loss).abs() < sched.eps {
                ell *= sched.sigma;
            }
        }
        let next = cost_model.costs(&current.params(), current.bits())?;
        for (s, r) in rho_sum.iter_mut().zip(rho(&costs, &next)) {
            *s += r;
        }
        costs = next;
        record.sparsity = current.sparsity();
        record.mean_bits = current.mean_bits();
        record.accuracy = acc_cur;
        log::debug!(
            "k={k} ell={:.6} delta={:.3e} loss={:.6} accepted={} sparsity={:.3}",
            record.ell_bar,
            record.delta,
            record.loss_after,
            record.accepted,
            record.sparsity
        );
        iterations.push(record);
        k += 1;
    }

    Ok(CompressionRun {
        config: cfg.clone(),
        schedule: sched,
        cost_model,
        initial_params: model.params(),
        initial_loss: l0,
        initial_accuracy: start.accuracy,
        iterations,
        rho_sum,
        final_model: Some(current),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Parameters whose importance is the `+inf` sentinel.
    pub never_reduced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportancePoint {
    pub index: usize,
    pub abs_w0: f64,
    /// `None` for the `+inf` sentinel.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: usize,
    pub accepted: usize,
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub final_sparsity: f64,
    pub final_mean_bits: f64,
    pub final_ell_bar: f64,
    /// Pearson correlation of finite importance against `|w0|`.
    pub importance_abs_w0_pearson: Option<f64>,
    pub importance_histogram: Histogram,
    pub importance_points: Vec<ImportancePoint>,
}

#[derive(Serialize)]
struct CsvRow {
    k: usize,
    ell_bar: f64,
    delta: f64,
    loss_before: f64,
    loss_after: f64,
    accepted: bool,
    sparsity: f64,
    mean_bits: f64,
    accuracy: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    r.is_finite().then_some(r)
}

fn histogram(mu: &[f64], bins: usize) -> Histogram {
    let finite: Vec<f64> = mu.iter().copied().filter(|m| m.is_finite()).collect();
    let never_reduced = mu.len() - finite.len();
    if finite.is_empty() {
        return Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
            never_reduced,
        };
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0; bins];
    for m in finite {
        counts[(((m - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Histogram {
        edges,
        counts,
        never_reduced,
    }
}

/// Summary figures, computed from the run log alone.
pub fn summarize(run: &CompressionRun) -> Result<Summary> {
    let mu = run.replay_importance()?;
    let last = run.iterations.last();
    let params = run.replay_params();
    let sparsity = if params.is_empty() {
        0.0
    } else {
        params.iter().filter(|v| **v == 0.0).count() as f64 / params.len() as f64
    };
    let pairs: Vec<(f64, f64)> = run
        .initial_params
        .iter()
        .zip(&mu)
        .filter(|(_, m)| m.is_finite())
        .map(|(w, m)| (w.abs(), *m))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let final_loss = run
        .iterations
        .iter()
        .rev()
        .find(|it| it.accepted)
        .map_or(run.initial_loss, |it| it.loss_after);
    Ok(Summary {
        iterations: run.iterations.len(),
        accepted: run.iterations.iter().filter(|it| it.accepted).count(),
        initial_loss: run.initial_loss,
        initial_accuracy: run.initial_accuracy,
        final_loss,
        final_accuracy: last.map_or(run.initial_accuracy, |it| it.accuracy),
        final_sparsity: sparsity,
        final_mean_bits: last.map_or(FULL_PRECISION_BITS as f64, |it| it.mean_bits),
        final_ell_bar: last.map_or(run.initial_loss, |it| it.ell_bar),
        importance_abs_w0_pearson: pearson(&xs, &ys),
        importance_histogram: histogram(&mu, 10),
        importance_points: run
            .initial_params
            .iter()
            .zip(&mu)
            .enumerate()
            .map(|(index, (w, m))| ImportancePoint {
                index,
                abs_w0: w.abs(),
                mu: m.is_finite().then_some(*m),
            })
            .collect(),
    })
}

pub const ITERATIONS_CSV: &str = "iterations.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Writes `iterations.csv` and `summary.json` into `dir`.
pub fn report(run: &CompressionRun, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(ITERATIONS_CSV))?;
    for it in &run.iterations {
        w.serialize(CsvRow {
            k: it.k,
            ell_bar: it.ell_bar,
            delta: it.delta,
            loss_before: it.loss_before,
            loss_after: it.loss_after,
            accepted: it.accepted,
            sparsity: it.sparsity,
            mean_bits: it.mean_bits,
            accuracy: it.accuracy,
        })?;
    }
    w.flush()?;
    let summary = summarize(run)?;
    std::fs::write(
        dir.join(SUMMARY_JSON),
        serde_json::to_string_pretty(&summary).expect("summary serialization cannot fail"),
    )?;
    Ok(summary)
}
