//! Adversarial training of the parent generator and per-decade children.

mod discriminator;
mod family;
mod identity;

pub use discriminator::{r1_surrogate, Discriminator};
pub use family::{
    load_family, save_family, train_family, FamilyManifest, FamilyReport, GeneratorFamily,
};
pub use identity::{
    blend_tensor_maps, identity_loss, identity_loss_batch, identity_loss_from_embeddings,
};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::generator::{from_tensors, to_tensors, Generator, GeneratorSpec, ParameterVector};
use crate::image::Image;
use crate::nn::{self, TensorMap, VarSet};
use crate::perception::FaceEmbedder;

/// Training images of one decade.
#[derive(Debug, Clone)]
pub struct DecadeDataset {
    pub decade: Decade,
    pub images: Vec<Image>,
}

impl DecadeDataset {
    pub fn new(decade: Decade, images: Vec<Image>) -> Result<Self> {
        if let Some(first) = images.first() {
            if images.iter().any(|i| !i.same_shape(first)) {
                return Err(Error::InvalidInput("dataset images differ in size".into()));
            }
        }
        Ok(Self { decade, images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub r1_gamma: f64,
    /// Lazy regularization: R1 runs every this many discriminator steps.
    pub r1_interval: usize,
    pub id_loss_weight: f64,
    pub decades: Vec<Decade>,
    /// Adaptive discriminator augmentation; not available in this implementation.
    pub ada: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 8,
            g_lr: 2e-3,
            d_lr: 2e-3,
            r1_gamma: 0.5,
            r1_interval: 4,
            id_loss_weight: 1.0,
            decades: Vec::new(),
            ada: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be positive".into()));
        }
        if self.batch_size == 0 || self.r1_interval == 0 {
            return Err(Error::InvalidInput(
                "batch size and R1 interval must be positive".into(),
            ));
        }
        for (name, v) in [
            ("g_lr", self.g_lr),
            ("d_lr", self.d_lr),
            ("r1_gamma", self.r1_gamma),
            ("id_loss_weight", self.id_loss_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.ada {
            return Err(Error::InvalidInput(
                "adaptive discriminator augmentation is not implemented".into(),
            ));
        }
        Ok(())
    }

    /// Hex digest of the JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_adv_loss: f64,
    pub id_loss: Option<f64>,
    pub r1_penalty: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
    /// Identity-loss samples skipped because no face was detected.
    pub id_skipped: usize,
    pub id_total: usize,
}

impl TrainLog {
    pub fn skip_rate(&self) -> f64 {
        if self.id_total == 0 {
            0.0
        } else {
            self.id_skipped as f64 / self.id_total as f64
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Result of one adversarial run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterVector,
    pub discriminator: Discriminator,
    pub log: TrainLog,
}

struct IdentityTerm<'a> {
    parent: TensorMap,
    embedder: &'a dyn FaceEmbedder,
    weight: f64,
}

fn adam(vars: Vec<candle_core::Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
    let relu = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((relu + tail)?)
}

fn check_finite(v: f64, iteration: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            iteration,
            detail: format!("{what} is {v}"),
        })
    }
}

fn adversarial_run(
    spec: &GeneratorSpec,
    init: &ParameterVector,
    disc: Discriminator,
    images: &[Image],
    cfg: &TrainConfig,
    identity: Option<IdentityTerm<'_>>,
) -> Result<TrainOutcome> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no training images".into()));
    }
    if images[0].height() != spec.output_resolution || images[0].width() != spec.output_resolution {
        return Err(Error::InvalidInput(format!(
            "training images are {}x{}, generator outputs {}",
            images[0].height(),
            images[0].width(),
            spec.output_resolution
        )));
    }
    let dev = Device::Cpu;
    let mut tensors = to_tensors(init, &dev, DType::F32)?;
    let layout = spec.block_layout();
    let mut g_vars = VarSet::new();
    for info in layout.iter().filter(|i| i.is_tunable()) {
        let t = tensors.remove(&info.name).expect("layout block");
        g_vars.insert(info.name.clone(), candle_core::Var::from_tensor(&t)?);
    }
    let fixed = tensors;
    let mut g_opt = adam(g_vars.vars(), cfg.g_lr)?;
    let mut d_opt = adam(disc.vars(), cfg.d_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainLog::default();
    let b = cfg.batch_size;

    let full_map = |vars: &VarSet| -> TensorMap {
        let mut m = vars.tensors();
        for (k, v) in &fixed {
            m.insert(k.clone(), v.clone());
        }
        m
    };

    for it in 0..cfg.iterations {
        // Generator phase.
        let g_map = full_map(&g_vars);
        let gen = Generator::new(spec, &g_map);
        let z = normal(&[b, spec.latent_dim], &mut rng)?;
        let w = gen.mapping(&z)?;
        let fake = gen.synthesis(&w)?;
        let g_adv = softplus(&disc.forward(&fake)?.neg()?)?.mean_all()?;
        let mut g_loss = g_adv.clone();
        let mut id_value = None;
        if let Some(term) = identity.as_ref().filter(|t| t.weight > 0.0) {
            let parent_gen = Generator::new(spec, &term.parent);
            let parent_img = parent_gen.synthesis(&w.detach())?;
            let blended = blend_tensor_maps(spec, &g_map, &term.parent)?;
            let blended_img = Generator::new(spec, &blended).synthesis(&w)?;
            let valid = identity::detect_batch(term.embedder, &parent_img)?;
            let (l, n_valid) =
                identity_loss_batch(term.embedder, &parent_img, &blended_img, &valid)?;
            log.id_total += b;
            log.id_skipped += b - n_valid;
            id_value = Some(check_finite(nn::scalar(&l)?, it, "identity loss")?);
            g_loss = (g_loss + (l * term.weight)?)?;
        }
        let g_adv_v = check_finite(nn::scalar(&g_adv)?, it, "generator loss")?;
        g_opt.backward_step(&g_loss)?;

        // Discriminator phase.
        let mut idx = Vec::with_capacity(b);
        while idx.len() < b {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<Image> = idx.iter().map(|i| images[*i].clone()).collect();
        let real = Image::batch_tensor(&batch, &dev, DType::F32)?;
        let g_map = full_map(&g_vars);
        let gen = Generator::new(spec, &g_map);
        let z = normal(&[b, spec.latent_dim], &mut rng)?;
        let fake = gen.synthesis(&gen.mapping(&z)?)?.detach();
        let d_loss = (softplus(&disc.forward(&fake)?)?.mean_all()?
            + softplus(&disc.forward(&real)?.neg()?)?.mean_all()?)?;
        let d_loss_v = check_finite(nn::scalar(&d_loss)?, it, "discriminator loss")?;
        let mut total = d_loss;
        let mut r1_value = None;
        if cfg.r1_gamma > 0.0 && it % cfg.r1_interval == 0 {
            let (sur, pen) = r1_surrogate(&disc, &real, cfg.r1_gamma)?;
            r1_value = Some(check_finite(pen, it, "R1 penalty")?);
            total = (total + (sur * cfg.r1_interval as f64)?)?;
        }
        d_opt.backward_step(&total)?;

        log.entries.push(TrainLogEntry {
            iteration: it,
            d_loss: d_loss_v,
            g_adv_loss: g_adv_v,
            id_loss: id_value,
            r1_penalty: r1_value,
        });
        if it % 200 == 0 {
            tracing::info!(iteration = it, d_loss = d_loss_v, g_loss = g_adv_v, id = ?id_value, "train step");
        }
    }
    let params = from_tensors(init, &g_vars.snapshot())?;
    if !params.all_finite() {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
            detail: "generator weights became non-finite".into(),
        });
    }
    Ok(TrainOutcome {
        params,
        discriminator: disc,
        log,
    })
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    use rand_distr::{Distribution, StandardNormal};
    let n = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
}

/// Train a parent generator from scratch on pooled images.
pub fn train_parent(
    spec: &GeneratorSpec,
    images: &[Image],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    let init = ParameterVector::init(spec, cfg.seed);
    let disc = Discriminator::new(spec, cfg.seed ^ 0xd15c)?;
    adversarial_run(spec, &init, disc, images, cfg, None)
}

/// Fine-tune a child generator for one decade, starting from `parent` (and from the
/// parent's discriminator when given).
pub fn finetune_decade(
    spec: &GeneratorSpec,
    parent: &ParameterVector,
    parent_disc: Option<&Discriminator>,
    data: &DecadeDataset,
    cfg: &TrainConfig,
    embedder: &dyn FaceEmbedder,
) -> Result<TrainOutcome> {
    // Zero iterations is allowed here and returns the parent untouched.
    TrainConfig {
        iterations: cfg.iterations.max(1),
        ..cfg.clone()
    }
    .validate()?;
    parent.check_spec(spec)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("decade {}", data.decade)));
    }
    let disc = match parent_disc {
        Some(d) => d.deep_clone()?,
        None => Discriminator::new(spec, cfg.seed ^ 0xd15c)?,
    };
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            params: parent.clone(),
            discriminator: disc,
            log: TrainLog::default(),
        });
    }
    let parent_map = to_tensors(parent, &Device::Cpu, DType::F32)?;
    let term = IdentityTerm {
        parent: parent_map,
        embedder,
        weight: cfg.id_loss_weight,
    };
    adversarial_run(spec, parent, disc, &data.images, cfg, Some(term))
}
