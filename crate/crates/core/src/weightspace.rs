//! Parameter-space diagnostics: 2-D PCA of generator weights and cosine geometry of
//! tuning offsets against decade directions. Only synthesis blocks that are neither
//! output-color layers nor noise buffers are flattened.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::generator::{BlockRole, GeneratorSpec, ParameterVector, TmtOffset};
use crate::training::GeneratorFamily;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLabel {
    Parent,
    Decade(Decade),
    Tuned { decade: Decade, image_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightPoint {
    pub label: WeightLabel,
    pub flat: Vec<f64>,
}

fn conv_block_names(spec: &GeneratorSpec) -> Vec<String> {
    spec.block_layout()
        .into_iter()
        .filter(|b| matches!(b.role, BlockRole::Synthesis { .. }) && !spec.is_rgb_block(&b.name))
        .map(|b| b.name)
        .collect()
}

/// Concatenated convolutional parameters in block-name order.
pub fn conv_flatten(params: &ParameterVector, spec: &GeneratorSpec) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    let mut names = conv_block_names(spec);
    names.sort();
    let mut out = Vec::new();
    for n in names {
        out.extend(params.block(&n)?.data.iter().map(|v| *v as f64));
    }
    Ok(out)
}

impl WeightPoint {
    pub fn from_params(label: WeightLabel, params: &ParameterVector, spec: &GeneratorSpec) -> Result<Self> {
        Ok(Self {
            label,
            flat: conv_flatten(params, spec)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaEmbedding {
    pub labels: Vec<WeightLabel>,
    pub coords: Vec<[f64; 2]>,
    /// Variance captured by each of the two axes.
    pub explained: [f64; 2],
    pub total_variance: f64,
}

/// Project mean-centered points onto their top two principal directions.
///
/// Each direction's sign is chosen so that its first clearly nonzero loading is positive.
pub fn pca_embed_weights(points: &[WeightPoint]) -> Result<PcaEmbedding> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].flat.len();
    if points.iter().any(|p| p.flat.len() != d) {
        return Err(Error::InvalidInput("weight points differ in length".into()));
    }
    let n = points.len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(&p.flat) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.flat.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    // The n x n Gram matrix shares its nonzero spectrum with the d x d scatter matrix.
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / n as f64;
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut coords = vec![[0.0; 2]; n];
    let mut explained = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= scale * 1e-12 || lambda <= 0.0 {
            continue;
        }
        let u = eig.eigenvectors.column(idx);
        // Loadings of the principal direction: X^T u / sqrt(lambda).
        let sl = lambda.sqrt();
        let mut sign = 1.0;
        let loadings: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| centered[i][j] * u[i]).sum::<f64>() / sl)
            .collect();
        let max_load = loadings.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(first) = loadings.iter().find(|v| v.abs() > max_load * 1e-9) {
            if *first < 0.0 {
                sign = -1.0;
            }
        }
        for i in 0..n {
            coords[i][k] = sign * u[i] * sl;
        }
        explained[k] = lambda / n as f64;
    }
    Ok(PcaEmbedding {
        labels: points.iter().map(|p| p.label.clone()).collect(),
        coords,
        explained,
        total_variance: total,
    })
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return None;
    }
    Some((uv / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let edges = (0..=bins)
            .map(|i| -1.0 + 2.0 * i as f64 / bins as f64)
            .collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v + 1.0) / 2.0) * bins as f64).floor() as isize;
            counts[i.clamp(0, bins as isize - 1) as usize] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSimilarityReport {
    pub source: Decade,
    /// `cos(delta, theta_t - theta_source)` per decade; `None` when undefined.
    pub delta_vs_decade: BTreeMap<Decade, Option<f64>>,
    /// Cosine between every pair of decade offsets `(t, u)` with `t < u`.
    pub pairwise: Vec<(Decade, Decade, Option<f64>)>,
    pub delta_histogram: Histogram,
    pub pairwise_histogram: Histogram,
}

fn defined(vals: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    vals.flatten().collect()
}

impl OffsetSimilarityReport {
    pub fn mean_abs_delta(&self) -> Option<f64> {
        mean(&defined(self.delta_vs_decade.values().copied()).iter().map(|v| v.abs()).collect::<Vec<_>>())
    }

    pub fn mean_delta(&self) -> Option<f64> {
        mean(&defined(self.delta_vs_decade.values().copied()))
    }

    pub fn mean_pairwise(&self) -> Option<f64> {
        mean(&defined(self.pairwise.iter().map(|p| p.2)))
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

const HISTOGRAM_BINS: usize = 20;

/// Compare a tuning offset with the decade directions of `family`, measured from the
/// offset's base decade.
pub fn offset_direction_similarity(
    offset: &TmtOffset,
    family: &GeneratorFamily,
) -> Result<OffsetSimilarityReport> {
    if offset.spec_hash() != family.spec_hash() {
        return Err(Error::IncompatibleParameters {
            expected: family.spec_hash(),
            found: offset.spec_hash().to_string(),
        });
    }
    let source = offset
        .base_decade()
        .ok_or_else(|| Error::InvalidInput("offset has no base decade".into()))?;
    let names = conv_block_names(&family.spec);
    let delta = offset.flatten_where(|n| names.iter().any(|m| m == n));
    let base = conv_flatten(family.child(source)?, &family.spec)?;
    let mut dirs = BTreeMap::new();
    for d in family.decades() {
        let theta = conv_flatten(family.child(d)?, &family.spec)?;
        let v: Vec<f64> = theta.iter().zip(&base).map(|(a, b)| a - b).collect();
        dirs.insert(d, v);
    }
    let delta_vs_decade: BTreeMap<Decade, Option<f64>> =
        dirs.iter().map(|(d, v)| (*d, cosine(&delta, v))).collect();
    let keys: Vec<Decade> = dirs.keys().copied().collect();
    let mut pairwise = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            pairwise.push((keys[i], keys[j], cosine(&dirs[&keys[i]], &dirs[&keys[j]])));
        }
    }
    for (d, c) in &delta_vs_decade {
        if c.is_none() {
            tracing::debug!(decade = %d, "zero-norm direction excluded");
        }
    }
    let delta_histogram = Histogram::of(&defined(delta_vs_decade.values().copied()), HISTOGRAM_BINS);
    let pairwise_histogram = Histogram::of(&defined(pairwise.iter().map(|p| p.2)), HISTOGRAM_BINS);
    Ok(OffsetSimilarityReport {
        source,
        delta_vs_decade,
        pairwise,
        delta_histogram,
        pairwise_histogram,
    })
}
