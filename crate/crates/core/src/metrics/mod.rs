//! Distribution, classification, and identity metrics.

mod classifier;
mod suite;

pub use classifier::{ClassifierTrainConfig, DecadeClassifier};
pub use suite::{evaluate_suite, DecadeMetrics, EvalItem, MetricReport, SuiteInputs, REFERENCE_ROW};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::perception::{cosine_similarity, FaceEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Real,
    Generated,
}

/// `N x D` feature matrix from one extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub vectors: DMatrix<f64>,
    pub decade: Option<Decade>,
    pub source: FeatureSource,
}

impl FeatureSet {
    pub fn from_rows(rows: &[Vec<f64>], decade: Option<Decade>, source: FeatureSource) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("feature rows differ in length".into()));
        }
        let vectors = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Ok(Self {
            vectors,
            decade,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    fn mean(&self) -> DVector<f64> {
        let n = self.len() as f64;
        DVector::from_fn(self.dim(), |j, _| self.vectors.column(j).sum() / n)
    }

    /// Unbiased covariance.
    fn covariance(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let n = self.len();
        let mut centered = self.vectors.clone();
        for i in 0..n {
            for j in 0..self.dim() {
                centered[(i, j)] -= mean[j];
            }
        }
        (centered.transpose() * &centered) / (n as f64 - 1.0)
    }
}

fn check_pair(a: &FeatureSet, b: &FeatureSet, min: usize) -> Result<()> {
    if a.len() < min || b.len() < min {
        return Err(Error::InvalidInput(format!(
            "need at least {min} feature vectors per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "feature dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `Tr((Sa Sb)^{1/2})` via the eigenvalues of the symmetric `Sa^{1/2} Sb Sa^{1/2}`.
fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> f64 {
    let ra = sym_sqrt(sa);
    let m = &ra * sb * &ra;
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

fn fid_from_stats(ma: &DVector<f64>, sa: &DMatrix<f64>, mb: &DVector<f64>, sb: &DMatrix<f64>) -> f64 {
    let dmu: f64 = ma.iter().zip(mb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    // Averaging both orders makes the result exactly symmetric in its arguments.
    let cross = 0.5 * (trace_sqrt_product(sa, sb) + trace_sqrt_product(sb, sa));
    dmu + (sa.trace() + sb.trace()) - 2.0 * cross
}

/// Frechet distance between Gaussian fits of two feature sets.
pub fn compute_fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair(a, b, 2)?;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sa, mut sb) = (a.covariance(&ma), b.covariance(&mb));
    let mut v = fid_from_stats(&ma, &sa, &mb, &sb);
    if !v.is_finite() {
        let jitter = 1e-6;
        tracing::warn!(jitter, "covariance ill-conditioned; adding diagonal jitter");
        for i in 0..a.dim() {
            sa[(i, i)] += jitter;
            sb[(i, i)] += jitter;
        }
        v = fid_from_stats(&ma, &sa, &mb, &sb);
    }
    if !v.is_finite() {
        return Err(Error::Numeric("FID is not finite".into()));
    }
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance over the pooled sample.
    Median,
    Fixed(f64),
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..a.ncols() {
        let d = a[(i, k)] - b[(j, k)];
        s += d * d;
    }
    s
}

fn median_pooled_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let pooled: Vec<(&DMatrix<f64>, usize)> = (0..a.nrows())
        .map(|i| (a, i))
        .chain((0..b.nrows()).map(|j| (b, j)))
        .collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for p in 0..pooled.len() {
        for q in p + 1..pooled.len() {
            d.push(sq_dist(pooled[p].0, pooled[p].1, pooled[q].0, pooled[q].1));
        }
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    m.sqrt()
}

/// Square root of the unbiased RBF-kernel MMD^2 estimate, clamped at zero.
pub fn compute_kmmd(a: &FeatureSet, b: &FeatureSet, bandwidth: Bandwidth) -> Result<f64> {
    check_pair(a, b, 2)?;
    let sigma = match bandwidth {
        Bandwidth::Median => median_pooled_distance(&a.vectors, &b.vectors),
        Bandwidth::Fixed(s) => s,
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        // Every pooled point coincides with at least half of the others.
        return Ok(0.0);
    }
    let g = 1.0 / (2.0 * sigma * sigma);
    let within = |m: &DMatrix<f64>| {
        let n = m.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += (-g * sq_dist(m, i, m, j)).exp();
                }
            }
        }
        s / (n * (n - 1)) as f64
    };
    let mut across = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            across += (-g * sq_dist(&a.vectors, i, &b.vectors, j)).exp();
        }
    }
    across /= (a.len() * b.len()) as f64;
    let mmd2 = within(&a.vectors) + within(&b.vectors) - 2.0 * across;
    Ok(mmd2.max(0.0).sqrt())
}

/// Fraction of predictions within `p` decades of the truth.
pub fn compute_dca(predicted: &[Decade], truth: &[Decade], p: u32) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset("no labels for DCA".into()));
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| a.steps_to(**b).unsigned_abs() <= p)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdAccuracy {
    /// Fraction of all pairs whose similarity exceeds the threshold.
    pub accuracy: f64,
    /// Pairs where either image yielded no embedding (counted as failures).
    pub absent: usize,
    pub total: usize,
}

/// Fraction of (original, transformed) pairs whose cosine similarity exceeds `threshold`.
pub fn compute_id_acc(
    pairs: &[(Image, Image)],
    embedder: &dyn FaceEmbedder,
    threshold: f64,
) -> Result<IdAccuracy> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no pairs for ID accuracy".into()));
    }
    let mut hits = 0;
    let mut absent = 0;
    for (a, b) in pairs {
        match (embedder.embed_face(a)?, embedder.embed_face(b)?) {
            (Some(u), Some(v)) => {
                if cosine_similarity(&u, &v)? > threshold {
                    hits += 1;
                }
            }
            _ => absent += 1,
        }
    }
    Ok(IdAccuracy {
        accuracy: hits as f64 / pairs.len() as f64,
        absent,
        total: pairs.len(),
    })
}

/// Threshold maximizing balanced accuracy of `score > t` between matching and
/// non-matching pair scores.
pub fn calibrate_threshold(same: &[f64], different: &[f64]) -> Result<f64> {
    if same.is_empty() || different.is_empty() {
        return Err(Error::EmptyDataset("calibration needs both pair kinds".into()));
    }
    let mut cands: Vec<f64> = same.iter().chain(different).copied().collect();
    cands.sort_by(|a, b| a.total_cmp(b));
    cands.dedup();
    let mut thresholds: Vec<f64> = cands.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    thresholds.push(cands[0] - 1e-9);
    let score = |t: f64| {
        let tp = same.iter().filter(|s| **s > t).count() as f64 / same.len() as f64;
        let tn = different.iter().filter(|s| **s <= t).count() as f64 / different.len() as f64;
        0.5 * (tp + tn)
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in thresholds {
        let s = score(t);
        if s > best.0 {
            best = (s, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::FnEmbedder;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, mean: f64, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        mean + s
                    })
                    .collect()
            })
            .collect();
        FeatureSet::from_rows(&rows, None, FeatureSource::Real).unwrap()
    }

    fn dec(v: &[u16]) -> Vec<Decade> {
        v.iter().map(|y| Decade::new(*y).unwrap()).collect()
    }

    #[test]
    fn fid_identities() {
        let a = gaussian(200, 6, 0.0, 1);
        let b = gaussian(150, 6, 0.5, 2);
        assert!(compute_fid(&a, &a).unwrap() < 1e-6);
        assert_eq!(
            compute_fid(&a, &b).unwrap().to_bits(),
            compute_fid(&b, &a).unwrap().to_bits()
        );
    }

    #[test]
    fn fid_of_shifted_unit_gaussians_is_squared_shift() {
        let a = gaussian(10_000, 1, 0.0, 3);
        let b = gaussian(10_000, 1, 3.0, 4);
        let v = compute_fid(&a, &b).unwrap();
        assert!((v - 9.0).abs() < 0.3, "{v}");
    }

    #[test]
    fn fid_handles_singular_covariance() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let a = FeatureSet::from_rows(&rows, None, FeatureSource::Real).unwrap();
        assert!(compute_fid(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn fid_needs_two_rows() {
        let a = gaussian(1, 3, 0.0, 1);
        assert!(compute_fid(&a, &a).is_err());
    }

    #[test]
    fn kmmd_point_masses_far_apart() {
        let a = FeatureSet::from_rows(&vec![vec![0.0, 0.0]; 20], None, FeatureSource::Real).unwrap();
        let b = FeatureSet::from_rows(&vec![vec![100.0, 0.0]; 20], None, FeatureSource::Real).unwrap();
        let v = compute_kmmd(&a, &b, Bandwidth::Fixed(1.0)).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-9, "{v}");
        // The median heuristic puts the bandwidth at the separation itself.
        let m = compute_kmmd(&a, &b, Bandwidth::Median).unwrap();
        let expected = (2.0 - 2.0 * (-0.5f64).exp()).sqrt();
        assert!((m - expected).abs() < 1e-9, "{m}");
    }

    #[test]
    fn kmmd_is_permutation_invariant() {
        let a = gaussian(30, 4, 0.0, 5);
        let b = gaussian(30, 4, 0.3, 6);
        let mut rows: Vec<Vec<f64>> = (0..30)
            .map(|i| a.vectors.row(i).iter().copied().collect())
            .collect();
        rows.reverse();
        let a2 = FeatureSet::from_rows(&rows, None, FeatureSource::Real).unwrap();
        let x = compute_kmmd(&a, &b, Bandwidth::Median).unwrap();
        let y = compute_kmmd(&a2, &b, Bandwidth::Median).unwrap();
        assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn dca_hand_example() {
        let t = dec(&[1900, 1910, 1920]);
        let p = dec(&[1910, 1910, 1940]);
        assert_eq!(compute_dca(&p, &t, 0).unwrap(), 1.0 / 3.0);
        assert_eq!(compute_dca(&p, &t, 1).unwrap(), 2.0 / 3.0);
        assert_eq!(compute_dca(&p, &t, 2).unwrap(), 1.0);
        assert_eq!(compute_dca(&t, &t, 0).unwrap(), 1.0);
        assert!(compute_dca(&p[..2], &t, 0).is_err());
    }

    proptest! {
        #[test]
        fn dca_is_monotone_in_tolerance(pairs in proptest::collection::vec((0u16..14, 0u16..14), 1..40)) {
            let p: Vec<Decade> = pairs.iter().map(|(a, _)| Decade::new(1880 + 10 * a).unwrap()).collect();
            let t: Vec<Decade> = pairs.iter().map(|(_, b)| Decade::new(1880 + 10 * b).unwrap()).collect();
            let mut prev = 0.0;
            for tol in 0..5 {
                let v = compute_dca(&p, &t, tol).unwrap();
                prop_assert!(v >= prev && (0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn id_acc_identity_and_unreachable_threshold() {
        let e = FnEmbedder::projection(48, 8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<(Image, Image)> = (0..5)
            .map(|_| {
                let im = Image::new(4, 4, (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                (im.clone(), im)
            })
            .collect();
        assert_eq!(compute_id_acc(&pairs, &e, 0.5).unwrap().accuracy, 1.0);
        assert_eq!(compute_id_acc(&pairs, &e, 1.01).unwrap().accuracy, 0.0);
        let flat = vec![(Image::filled(4, 4, [0.0; 3]), pairs[0].0.clone())];
        let r = compute_id_acc(&flat, &e, 0.0).unwrap();
        assert_eq!((r.absent, r.accuracy), (1, 0.0));
    }

    #[test]
    fn calibration_separates_scores() {
        let t = calibrate_threshold(&[0.9, 0.8, 0.85], &[0.1, 0.3, 0.2]).unwrap();
        assert!(t > 0.3 && t < 0.8);
    }
}
