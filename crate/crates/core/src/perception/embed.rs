use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, TensorMap, VarSet};

pub const DEFAULT_EMBEDDING_DIM: usize = 128;

/// Unit-norm identity embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. A zero or non-finite vector is rejected.
    pub fn from_raw(raw: Vec<f32>) -> Result<Self> {
        let norm = raw
            .iter()
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Numeric(
                "embedding has zero or non-finite norm".into(),
            ));
        }
        Ok(Self {
            values: raw.iter().map(|v| ((*v as f64) / norm) as f32).collect(),
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (*v as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidInput(format!(
            "embedding dims differ: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let dot: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum();
    let uu: f64 = u.values.iter().map(|a| *a as f64 * *a as f64).sum();
    let vv: f64 = v.values.iter().map(|a| *a as f64 * *a as f64).sum();
    // sqrt(s * s) == s in IEEE arithmetic, so v against itself or its negation is exact.
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Identity embedding backend.
pub trait FaceEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Whether a face is present. Images without one get no embedding.
    fn detect(&self, image: &Image) -> bool;

    /// Differentiable batch embedding `[B, 3, H, W] -> [B, dim]` with unit-norm rows.
    fn embed_tensor(&self, x: &Tensor) -> Result<Tensor>;

    /// `Ok(None)` when no face is detected.
    fn embed_face(&self, image: &Image) -> Result<Option<EmbeddingVector>> {
        if !self.detect(image) {
            return Ok(None);
        }
        let t = image.to_tensor(&Device::Cpu, DType::F32)?;
        let e = self
            .embed_tensor(&t)?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        EmbeddingVector::from_raw(e).map(Some)
    }
}

/// A flat image carries no face. Used by the built-in backends.
pub fn has_face_signal(image: &Image, min_std: f32) -> bool {
    let d = image.data();
    if d.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let n = d.len() as f64;
    let mean = d.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = d.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() > min_std as f64
}

const DETECT_MIN_STD: f32 = 0.02;
const WORK_RES: usize = 16;
const CONV_WIDTHS: [usize; 2] = [16, 32];

/// Small convolutional embedder trained with an additive cosine margin objective.
#[derive(Debug, Clone)]
pub struct ConvEmbedder {
    params: TensorMap,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderTrainConfig {
    pub dim: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    /// Logit scale.
    pub scale: f64,
    /// Additive cosine margin.
    pub margin: f64,
    pub seed: u64,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
            iterations: 600,
            batch: 32,
            lr: 2e-3,
            scale: 16.0,
            margin: 0.35,
            seed: 7,
        }
    }
}

fn layout(dim: usize) -> Vec<(String, Vec<usize>)> {
    let mut l = Vec::new();
    let mut cin = 3;
    for (i, &c) in CONV_WIDTHS.iter().enumerate() {
        l.push((format!("conv{i}.weight"), vec![c, cin, 3, 3]));
        l.push((format!("conv{i}.bias"), vec![c]));
        cin = c;
    }
    let flat = cin * (WORK_RES / 4) * (WORK_RES / 4);
    l.push(("fc.weight".into(), vec![dim, flat]));
    l.push(("fc.bias".into(), vec![dim]));
    l
}

fn forward(params: &TensorMap, x: &Tensor) -> Result<Tensor> {
    let (_, _, mut h, _) = x.dims4()?;
    let mut y = x.clone();
    while h > WORK_RES {
        y = nn::downsample2x(&y)?;
        h /= 2;
    }
    while h < WORK_RES {
        y = nn::upsample2x(&y)?;
        h *= 2;
    }
    if h != WORK_RES {
        return Err(Error::InvalidInput(format!(
            "embedder input must be a power-of-two multiple of {WORK_RES}"
        )));
    }
    let dt = x.dtype();
    for i in 0..CONV_WIDTHS.len() {
        let w = nn::get(params, &format!("conv{i}.weight"))?.to_dtype(dt)?;
        let b = nn::get(params, &format!("conv{i}.bias"))?.to_dtype(dt)?;
        y = nn::downsample2x(&nn::lrelu(&nn::conv(&y, &w, Some(&b))?)?)?;
    }
    let y = y.flatten_from(1)?;
    let w = nn::get(params, "fc.weight")?.to_dtype(dt)?;
    let b = nn::get(params, "fc.bias")?.to_dtype(dt)?;
    nn::l2_normalize(&nn::linear(&y, &w, Some(&b), 1.0)?)
}

impl ConvEmbedder {
    /// Untrained embedder with seeded weights.
    pub fn untrained(dim: usize, seed: u64) -> Result<Self> {
        let vars = VarSet::init(&layout(dim), seed, &Device::Cpu)?;
        Ok(Self {
            params: vars.snapshot(),
            dim,
        })
    }

    /// Trains on `(image, identity)` pairs. Identities must be `0..n_ids`.
    pub fn train(data: &[(Image, usize)], cfg: &EmbedderTrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("embedder training set".into()));
        }
        let n_ids = data.iter().map(|(_, id)| *id).max().unwrap_or(0) + 1;
        let dev = Device::Cpu;
        let vars = VarSet::init(&layout(cfg.dim), cfg.seed, &dev)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe3b);
        let centers = VarSet::init(
            &[("centers".to_string(), vec![n_ids, cfg.dim])],
            cfg.seed + 1,
            &dev,
        )?;
        let mut all = vars.vars();
        all.extend(centers.vars());
        let mut opt = AdamW::new(
            all,
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        for it in 0..cfg.iterations {
            let mut idx = Vec::with_capacity(cfg.batch);
            while idx.len() < cfg.batch.min(data.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let imgs: Vec<Image> = idx.iter().map(|i| data[*i].0.clone()).collect();
            let labels: Vec<u32> = idx.iter().map(|i| data[*i].1 as u32).collect();
            let x = Image::batch_tensor(&imgs, &dev, DType::F32)?;
            let emb = forward(&vars.tensors(), &x)?;
            let c = nn::l2_normalize(centers.tensors().get("centers").expect("centers"))?;
            let cos = emb.matmul(&c.t()?)?;
            let target = Tensor::from_vec(labels, idx.len(), &dev)?;
            let onehot = candle_nn::encoding::one_hot(target.clone(), n_ids, 1f32, 0f32)?;
            let logits = ((cos - (onehot * cfg.margin)?)? * cfg.scale)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &target)?;
            opt.backward_step(&loss)?;
            if it % 100 == 0 {
                tracing::debug!(iteration = it, loss = nn::scalar(&loss)?, "embedder step");
            }
        }
        Ok(Self {
            params: vars.snapshot(),
            dim: cfg.dim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_safetensors(&self.params, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = nn::load_safetensors(path)?;
        let dim = nn::get(&params, "fc.bias")?.dims1()?;
        for (name, shape) in layout(dim) {
            let t = nn::get(&params, &name)?;
            if t.dims() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    block: name,
                    expected: shape,
                    found: t.dims().to_vec(),
                });
            }
        }
        Ok(Self { params, dim })
    }
}

impl FaceEmbedder for ConvEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn detect(&self, image: &Image) -> bool {
        has_face_signal(image, DETECT_MIN_STD)
    }

    fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        forward(&self.params, x)
    }
}

type TensorFn = dyn Fn(&Tensor) -> Result<Tensor> + Send + Sync;
type DetectFn = dyn Fn(&Image) -> bool + Send + Sync;

/// Embedder built from closures, for tests and custom backends.
#[derive(Clone)]
pub struct FnEmbedder {
    dim: usize,
    embed: Arc<TensorFn>,
    detect: Arc<DetectFn>,
}

impl FnEmbedder {
    /// `embed` may return unnormalized rows; they are normalized here.
    pub fn new(
        dim: usize,
        embed: impl Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static,
        detect: impl Fn(&Image) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            embed: Arc::new(embed),
            detect: Arc::new(detect),
        }
    }

    /// Deterministic random linear projection of the flattened pixels (plus a
    /// constant offset so the all-zero image still embeds).
    pub fn projection(in_len: usize, dim: usize, seed: u64) -> Result<Self> {
        let vars = VarSet::init(
            &[("p.weight".to_string(), vec![dim, in_len])],
            seed,
            &Device::Cpu,
        )?;
        let w = vars.snapshot().remove("p.weight").expect("weight");
        Ok(Self::new(
            dim,
            move |x: &Tensor| {
                let flat = (x.flatten_from(1)? + 1.0)?;
                let w = w.to_dtype(x.dtype())?;
                Ok(flat.matmul(&w.t()?)?)
            },
            |img| has_face_signal(img, DETECT_MIN_STD),
        ))
    }
}

impl FaceEmbedder for FnEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn detect(&self, image: &Image) -> bool {
        (self.detect)(image)
    }

    fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        nn::l2_normalize(&(self.embed)(x)?)
    }
}

/// Wraps an embedder with an on-disk cache keyed by image content hash.
pub struct CachedEmbedder<E> {
    inner: E,
    dir: PathBuf,
}

impl<E: FaceEmbedder> CachedEmbedder<E> {
    pub fn new(inner: E, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }
}

impl<E: FaceEmbedder> FaceEmbedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn detect(&self, image: &Image) -> bool {
        self.inner.detect(image)
    }

    fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.inner.embed_tensor(x)
    }

    fn embed_face(&self, image: &Image) -> Result<Option<EmbeddingVector>> {
        let path = self.dir.join(format!("{}.emb.json", image.content_hash()));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(v) = serde_json::from_slice::<Option<EmbeddingVector>>(&bytes) {
                return Ok(v);
            }
        }
        let v = self.inner.embed_face(image)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&v)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(v)
    }
}

/// Embedders looked up by configured backend name.
#[derive(Default, Clone)]
pub struct EmbedderRegistry {
    backends: HashMap<String, Arc<dyn FaceEmbedder>>,
}

impl EmbedderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, backend: Arc<dyn FaceEmbedder>) {
        self.backends.insert(name.to_string(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FaceEmbedder>> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("no embedder registered as `{name}`")))
    }
}
