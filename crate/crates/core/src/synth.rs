//! Two-class synthetic data: Gaussian clusters on a random informative
//! subspace, redundant linear mixtures of the informative features, pure
//! noise features and a small fraction of flipped labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub dim: usize,
    /// Defaults to `max(2, dim / 20)`, limited by `dim`.
    pub n_informative: Option<usize>,
    /// Defaults to `n_informative`, limited by the remaining dimensions.
    pub n_redundant: Option<usize>,
    /// Distance of each class mean from the origin.
    pub class_sep: f64,
    pub flip: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            dim: 200,
            n_informative: None,
            n_redundant: None,
            class_sep: 2.0,
            flip: 0.03,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn new(n: usize, dim: usize, seed: u64) -> Self {
        Self {
            n,
            dim,
            seed,
            ..Self::default()
        }
    }

    fn sizes(&self) -> (usize, usize) {
        let inf = self.n_informative.unwrap_or((self.dim / 20).max(2)).min(self.dim);
        let red = self.n_redundant.unwrap_or(inf).min(self.dim - inf);
        (inf, red)
    }
}

pub fn gen_random_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n == 0 || cfg.dim == 0 {
        return Err(Error::Config("n and dim must be at least 1".into()));
    }
    if cfg.n_informative == Some(0) {
        return Err(Error::Config("n_informative must be at least 1".into()));
    }
    if !(0.0..=0.5).contains(&cfg.flip) || !(cfg.class_sep >= 0.0 && cfg.class_sep.is_finite()) {
        return Err(Error::Config("flip must be in [0, 0.5] and class_sep nonnegative".into()));
    }
    let (inf, red) = cfg.sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut mean: Vec<f64> = (0..inf).map(|_| rng.sample(StandardNormal)).collect();
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    mean.iter_mut().for_each(|v| *v *= cfg.class_sep / norm);
    // each redundant feature mixes the informative ones with unit-norm weights
    let mix: Vec<Vec<f64>> = (0..red)
        .map(|_| {
            let row: Vec<f64> = (0..inf).map(|_| rng.sample(StandardNormal)).collect();
            let s = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let mut columns: Vec<usize> = (0..cfg.dim).collect();
    columns.shuffle(&mut rng);

    let mut labels: Vec<usize> = (0..cfg.n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let mut features = vec![0.0; cfg.n * cfg.dim];
    let mut raw = vec![0.0; cfg.dim];
    for (i, &y) in labels.iter().enumerate() {
        let s = if y == 1 { 1.0 } else { -1.0 };
        for j in 0..inf {
            raw[j] = s * mean[j] + rng.sample::<f64, _>(StandardNormal);
        }
        for (r, m) in mix.iter().enumerate() {
            raw[inf + r] = m.iter().zip(&raw[..inf]).map(|(a, b)| a * b).sum();
        }
        for v in raw.iter_mut().skip(inf + red) {
            *v = rng.sample(StandardNormal);
        }
        let row = &mut features[i * cfg.dim..(i + 1) * cfg.dim];
        for (k, &c) in columns.iter().enumerate() {
            row[c] = raw[k] as f32 as f64;
        }
    }
    for l in labels.iter_mut() {
        if rng.random::<f64>() < cfg.flip {
            *l = 1 - *l;
        }
    }
    Dataset::new(features, labels, cfg.dim, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_case_shape() {
        let d = gen_random_dataset(&SynthConfig::new(100, 10, 1)).unwrap();
        assert_eq!((d.len(), d.dim(), d.n_classes()), (100, 10, 2));
        let ones = d.labels().iter().filter(|&&l| l == 1).count();
        assert!((35..=65).contains(&ones));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::new(200, 12, 9);
        let a = gen_random_dataset(&cfg).unwrap().to_bytes();
        let b = gen_random_dataset(&cfg).unwrap().to_bytes();
        assert_eq!(a, b);
        let c = gen_random_dataset(&SynthConfig::new(200, 12, 10)).unwrap().to_bytes();
        assert_ne!(a, c);
    }

    #[test]
    fn values_survive_file_format() {
        let d = gen_random_dataset(&SynthConfig::new(50, 7, 3)).unwrap();
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn dim_one_works() {
        let d = gen_random_dataset(&SynthConfig::new(10, 1, 0)).unwrap();
        assert_eq!(d.dim(), 1);
    }
}
