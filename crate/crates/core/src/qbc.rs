//! Query-by-committee sample selection with the uncompressed and compressed
//! models as the committee.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Matrix, Model};

const Q_FLOOR: f64 = 1e-12;

/// `KL(p || q)` with `0 log 0 = 0` and `q` floored at `1e-12`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(Q_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityIndex {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Per-class embedding centroids of `model` and the per-sample weight
/// `exp(-||e(x) - c(class(x))||)`.
pub fn build_similarity_index(model: &Model, data: &Dataset) -> Result<SimilarityIndex> {
    let fwd = model.forward_dataset(data)?;
    let emb = &fwd.embeddings;
    let k = data.n_classes();
    let dim = emb.cols;
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in data.labels().iter().enumerate() {
        counts[l] += 1;
        for (s, e) in sums[l].iter_mut().zip(emb.row(i)) {
            *s += e;
        }
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UndefinedCentroid { class });
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let weights = data
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let d2: f64 = emb
                .row(i)
                .iter()
                .zip(&centroids[l])
                .map(|(e, c)| (e - c) * (e - c))
                .sum();
            (-d2.sqrt()).exp()
        })
        .collect();
    Ok(SimilarityIndex { centroids, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbcRanking {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
    pub pool_fraction: f64,
}

impl QbcRanking {
    /// Number of top-ranked samples eligible for batches (at least one).
    pub fn pool_size(&self) -> usize {
        let n = self.order.len();
        ((self.pool_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
    }

    pub fn pool(&self) -> &[usize] {
        &self.order[..self.pool_size()]
    }

    /// Ranking that treats every sample alike (plain random batches).
    pub fn uniform(n: usize) -> Self {
        Self {
            scores: vec![0.0; n],
            order: (0..n).collect(),
            pool_fraction: 1.0,
        }
    }
}

fn check_fraction(pool_fraction: f64) -> Result<()> {
    if !(pool_fraction > 0.0 && pool_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "pool_fraction must be in (0, 1], got {pool_fraction}"
        )));
    }
    Ok(())
}

/// Orders samples by descending weighted divergence; ties keep index order.
pub fn ranking_from_scores(scores: Vec<f64>, pool_fraction: f64) -> Result<QbcRanking> {
    check_fraction(pool_fraction)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(QbcRanking {
        scores,
        order,
        pool_fraction,
    })
}

/// Scores each sample by `weight * KL(p_uncompressed || p_compressed)`.
pub fn rank(
    uncompressed: &Model,
    compressed: &Model,
    data: &Dataset,
    index: &SimilarityIndex,
    pool_fraction: f64,
) -> Result<QbcRanking> {
    let p = uncompressed.posteriors(data)?;
    rank_against(&p, compressed, data, index, pool_fraction)
}

/// [`rank`] with the uncompressed posteriors already computed.
pub fn rank_against(
    reference: &Matrix,
    compressed: &Model,
    data: &Dataset,
    index: &SimilarityIndex,
    pool_fraction: f64,
) -> Result<QbcRanking> {
    check_fraction(pool_fraction)?;
    if reference.rows != data.len() || index.weights.len() != data.len() {
        return Err(Error::Shape(format!(
            "reference covers {} samples and index {}, dataset has {}",
            reference.rows,
            index.weights.len(),
            data.len()
        )));
    }
    let q = compressed.posteriors(data)?;
    let scores = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(index.weights[i] * kl_divergence(reference.row(i), q.row(i))?))
        .collect::<Result<Vec<f64>>>()?;
    ranking_from_scores(scores, pool_fraction)
}

/// Uniform draw without replacement from the ranking's pool.
pub fn draw_batch(ranking: &QbcRanking, batch_size: usize, seed: u64) -> Result<Vec<usize>> {
    let pool = ranking.pool();
    if batch_size == 0 || batch_size > pool.len() {
        return Err(Error::Config(format!(
            "batch size {batch_size} does not fit a pool of {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), batch_size)
        .into_iter()
        .map(|k| pool[k])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use proptest::prelude::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.5108).abs() < 1e-4);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    fn two_layer() -> Model {
        Model::new(
            vec![
                Layer {
                    rows: 2,
                    cols: 1,
                    activation: Activation::Identity,
                    w: vec![1.0, -1.0],
                    b: vec![0.0, 0.0],
                },
                Layer {
                    rows: 1,
                    cols: 2,
                    activation: Activation::Sigmoid,
                    w: vec![1.0, 0.5],
                    b: vec![0.0],
                },
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_sample_per_class_has_unit_weights() {
        let d = Dataset::new(vec![0.3, -2.0], vec![0, 1], 1, 2).unwrap();
        let idx = build_similarity_index(&two_layer(), &d).unwrap();
        assert_eq!(idx.weights, vec![1.0, 1.0]);
        assert_eq!(idx.centroids.len(), 2);
    }

    #[test]
    fn weight_at_unit_distance() {
        // embeddings are (x, -x): samples at x = +-1/sqrt(2) sit 1 from their mean
        let x = 0.5f64.sqrt();
        let d = Dataset::new(vec![x, -x, 5.0], vec![0, 0, 1], 1, 2).unwrap();
        let idx = build_similarity_index(&two_layer(), &d).unwrap();
        assert!((idx.weights[0] - (-1f64).exp()).abs() < 1e-12);
        assert!((idx.weights[0] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn empty_class_is_named() {
        let d = Dataset::new(vec![0.3], vec![0], 1, 2).unwrap();
        match build_similarity_index(&two_layer(), &d) {
            Err(Error::UndefinedCentroid { class }) => assert_eq!(class, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_committee_scores_zero() {
        let m = two_layer();
        let d = Dataset::new(vec![0.3, -2.0, 1.0], vec![0, 1, 1], 1, 2).unwrap();
        let idx = build_similarity_index(&m, &d).unwrap();
        let r = rank(&m, &m, &d, &idx, 1.0).unwrap();
        assert_eq!(r.scores, vec![0.0; 3]);
        assert_eq!(r.order, vec![0, 1, 2]);
    }

    #[test]
    fn weighted_scores_by_hand() {
        let scores: Vec<f64> = [0.5, 0.1].iter().zip([0.9, 1.0]).map(|(k, w)| k * w).collect();
        let r = ranking_from_scores(scores, 1.0).unwrap();
        assert!((r.scores[0] - 0.45).abs() < 1e-15);
        assert_eq!(r.order, vec![0, 1]);
    }

    #[test]
    fn pool_is_top_percent() {
        let r = ranking_from_scores((0..100_000).map(|i| i as f64).collect(), 0.01).unwrap();
        assert_eq!(r.pool_size(), 1000);
        assert_eq!(r.pool()[0], 99_999);
    }

    #[test]
    fn batch_draws() {
        let r = ranking_from_scores(vec![3.0, 1.0, 2.0, 0.0], 0.5).unwrap();
        let mut b = draw_batch(&r, 2, 7).unwrap();
        b.sort();
        assert_eq!(b, vec![0, 2]);
        assert_eq!(draw_batch(&r, 2, 7).unwrap(), draw_batch(&r, 2, 7).unwrap());
        assert!(matches!(draw_batch(&r, 3, 7), Err(Error::Config(_))));
        let all = QbcRanking::uniform(10);
        let b = draw_batch(&all, 10, 1).unwrap();
        let mut s = b.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative((p, q) in (2usize..8).prop_flat_map(|n| (dist(n), dist(n)))) {
            let v = kl_divergence(&p, &q).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() < 1e-12);
        }

        #[test]
        fn rank_is_permutation_equivariant(
            scores in prop::collection::vec(0.0f64..1.0, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..scores.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let a = ranking_from_scores(scores.clone(), 1.0).unwrap();
            let b = ranking_from_scores(permuted, 1.0).unwrap();
            let sa: Vec<f64> = a.order.iter().map(|&i| a.scores[i]).collect();
            let sb: Vec<f64> = b.order.iter().map(|&i| b.scores[i]).collect();
            prop_assert_eq!(sa, sb);
        }
    }
}
