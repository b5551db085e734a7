//! Mini-batch Adam with L2 weight decay, enough to produce the uncompressed
//! models the compressor starts from.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Layer, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths; empty means a single output layer.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Penalty `l2/2 * ||w||^2` on weights (not biases).
    pub l2: f64,
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            hidden_activation: Activation::Sigmoid,
            max_epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            l2: 1e-3,
            target_accuracy: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epochs: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub reached_target: bool,
}

/// Glorot-uniform weights, zero biases. Two classes get a single sigmoid
/// unit, more classes a softmax layer.
pub fn init_model(
    input_dim: usize,
    n_classes: usize,
    hidden: &[usize],
    hidden_activation: Activation,
    seed: u64,
) -> Result<Model> {
    if hidden.contains(&0) {
        return Err(Error::Config("hidden layer widths must be positive".into()));
    }
    if hidden_activation == Activation::Softmax {
        return Err(Error::Config("softmax is only allowed on the output layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out_rows, out_act) = if n_classes <= 2 {
        (1, Activation::Sigmoid)
    } else {
        (n_classes, Activation::Softmax)
    };
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(out_rows);
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (cols, rows) = (w[0], w[1]);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Layer {
                rows,
                cols,
                activation: if k + 2 == widths.len() { out_act } else { hidden_activation },
                w: (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
                b: vec![0.0; rows],
            }
        })
        .collect();
    Model::new(layers, None)
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::Config(
            "batch_size and learning_rate must be positive, l2 nonnegative".into(),
        ));
    }
    let mut model = init_model(
        data.dim(),
        data.n_classes(),
        &cfg.hidden,
        cfg.hidden_activation,
        cfg.seed,
    )?;
    let weight_mask: Vec<bool> = model
        .block_ranges()
        .into_iter()
        .flat_map(|(w, b)| w.map(|_| true).chain(b.map(|_| false)))
        .collect();
    let mut w = model.params();
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut report = nn::loss(&model, data)?;
    let mut epochs = 0;
    while epochs < cfg.max_epochs && report.accuracy < cfg.target_accuracy {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let sub = data.subset(batch)?;
            let mut g = nn::gradient(&model, &sub)?;
            for i in 0..g.len() {
                if weight_mask[i] {
                    g[i] += cfg.l2 * w[i];
                }
            }
            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            model.set_params(&w)?;
        }
        epochs += 1;
        report = nn::loss(&model, data)?;
    }
    let reached_target = report.accuracy >= cfg.target_accuracy;
    if !reached_target {
        log::warn!(
            "training stopped at accuracy {:.4} after {epochs} epochs (target {})",
            report.accuracy,
            cfg.target_accuracy
        );
    }
    let model = Model::new(model.layers().to_vec(), None)?;
    Ok(TrainOutcome {
        model,
        epochs,
        accuracy: report.accuracy,
        loss: report.mean_loss,
        reached_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_random_dataset, SynthConfig};

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = gen_random_dataset(&SynthConfig::new(40, 5, 2)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&d, &cfg).unwrap();
        let init = init_model(5, 2, &[], Activation::Sigmoid, 4).unwrap();
        assert_eq!(out.model.params(), init.params());
        assert_eq!(out.epochs, 0);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let d = gen_random_dataset(&SynthConfig::new(200, 8, 2)).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            target_accuracy: 1.1,
            hidden: vec![4],
            ..TrainConfig::default()
        };
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.epochs, 3);
    }

    #[test]
    fn learns_separable_data() {
        let d = gen_random_dataset(&SynthConfig::new(1000, 20, 5)).unwrap();
        let out = train(&d, &TrainConfig::default()).unwrap();
        assert!(out.accuracy >= 0.9, "accuracy {}", out.accuracy);
    }

    #[test]
    fn softmax_head_for_many_classes() {
        let m = init_model(3, 4, &[5], Activation::Relu, 0).unwrap();
        assert_eq!(m.layers()[1].activation, Activation::Softmax);
        assert_eq!(m.n_outputs(), 4);
    }
}
