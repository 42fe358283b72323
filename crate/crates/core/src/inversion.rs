//! Latent projection, pivotal tuning with frozen output-color layers, and offset transfer
//! across a generator family.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::generator::{
    mean_w, offset_apply, synthesize, to_tensors, Generator, GeneratorSpec, LatentCode,
    LatentSpace, ParameterVector, TmtOffset,
};
use crate::image::Image;
use crate::nn::{self, TensorMap};
use crate::perception::{
    masked_perceptual_loss, masked_pixel_loss, FaceEmbedder, MaskWeights, PerceptualNet,
    WeightedMask,
};
use crate::training::GeneratorFamily;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub steps: usize,
    pub lr: f64,
    pub perceptual_weight: f64,
    pub pixel_weight: f64,
    /// Mapping-network samples averaged for the starting code.
    pub mean_w_samples: usize,
    pub seed: u64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.1,
            perceptual_weight: 1.0,
            pixel_weight: 1.0,
            mean_w_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStep {
    pub step: usize,
    pub perceptual: f64,
    pub pixel: f64,
}

impl ProjectionStep {
    pub fn total(&self, cfg: &ProjectConfig) -> f64 {
        cfg.perceptual_weight * self.perceptual + cfg.pixel_weight * self.pixel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    /// Best W-space code found.
    pub code: LatentCode,
    pub source_decade: Option<Decade>,
    /// Losses at every step, evaluated before that step's update.
    pub trace: Vec<ProjectionStep>,
    /// False when no optimization step ran.
    pub converged: bool,
}

fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?)
}

fn check_resolution(x: &Image, spec: &GeneratorSpec) -> Result<()> {
    if x.height() != spec.output_resolution || x.width() != spec.output_resolution {
        return Err(Error::InvalidInput(format!(
            "image is {}x{}, generator outputs {}x{}",
            x.height(),
            x.width(),
            spec.output_resolution,
            spec.output_resolution
        )));
    }
    Ok(())
}

/// Optimize a single W code so that `child` reproduces `x`.
pub fn project(
    x: &Image,
    child: &ParameterVector,
    spec: &GeneratorSpec,
    source_decade: Option<Decade>,
    net: &PerceptualNet,
    cfg: &ProjectConfig,
) -> Result<InversionResult> {
    check_resolution(x, spec)?;
    child.check_spec(spec)?;
    let start = mean_w(child, spec, cfg.mean_w_samples.max(1), cfg.seed)?;
    if cfg.steps == 0 {
        return Ok(InversionResult {
            code: start,
            source_decade,
            trace: Vec::new(),
            converged: false,
        });
    }
    let dev = Device::Cpu;
    let params = to_tensors(child, &dev, DType::F32)?;
    let gen = Generator::new(spec, &params);
    let target = x.to_tensor(&dev, DType::F32)?;
    let ones = Tensor::ones(
        (1, 1, spec.output_resolution, spec.output_resolution),
        DType::F32,
        &dev,
    )?;
    let w = Var::from_tensor(&Tensor::from_slice(
        &start.values,
        (1, spec.latent_dim),
        &dev,
    )?)?;
    let mut opt = adam(vec![w.clone()], cfg.lr)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut best = (f64::INFINITY, start.values.clone());
    for step in 0..cfg.steps {
        let img = gen.synthesis(w.as_tensor())?;
        let perceptual = masked_perceptual_loss(net, &img, &target, &ones)?;
        let pixel = masked_pixel_loss(&img, &target, &ones)?;
        let loss = ((&perceptual * cfg.perceptual_weight)? + (&pixel * cfg.pixel_weight)?)?;
        let entry = ProjectionStep {
            step,
            perceptual: nn::scalar(&perceptual)?,
            pixel: nn::scalar(&pixel)?,
        };
        let total = entry.total(cfg);
        if !total.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                detail: "projection loss is not finite".into(),
            });
        }
        if total < best.0 {
            best = (total, w.as_tensor().flatten_all()?.to_vec1::<f32>()?);
        }
        trace.push(entry);
        opt.backward_step(&loss)?;
    }
    // The final update has not been scored yet.
    let img = gen.synthesis(w.as_tensor())?;
    let total = cfg.perceptual_weight
        * nn::scalar(&masked_perceptual_loss(net, &img, &target, &ones)?)?
        + cfg.pixel_weight * nn::scalar(&masked_pixel_loss(&img, &target, &ones)?)?;
    if total < best.0 {
        best = (total, w.as_tensor().flatten_all()?.to_vec1::<f32>()?);
    }
    Ok(InversionResult {
        code: LatentCode::new(best.1, LatentSpace::W)?,
        source_decade,
        trace,
        converged: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmtConfig {
    pub max_steps: usize,
    pub lr: f64,
    pub lpips_stop_threshold: f64,
    pub perceptual_loss_weight: f64,
    pub pixel_loss_weight: f64,
    pub id_loss_weight: f64,
    pub mask: MaskWeights,
}

impl Default for TmtConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            lr: 3e-4,
            lpips_stop_threshold: 0.03,
            perceptual_loss_weight: 1.0,
            pixel_loss_weight: 0.1,
            id_loss_weight: 0.1,
            mask: MaskWeights::default(),
        }
    }
}

impl TmtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lpips_stop_threshold > 0.0) {
            return Err(Error::InvalidInput(
                "lpips_stop_threshold must be positive".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("perceptual_loss_weight", self.perceptual_loss_weight),
            ("pixel_loss_weight", self.pixel_loss_weight),
            ("id_loss_weight", self.id_loss_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        self.mask.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneStep {
    pub step: usize,
    pub perceptual: f64,
    pub pixel: f64,
    pub identity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub params: ParameterVector,
    /// Losses evaluated before each update; the last entry is the state returned.
    pub trace: Vec<TuneStep>,
    pub early_stopped: bool,
}

impl TuneResult {
    pub fn steps_run(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Tune `child` around the fixed pivot `inv.code` so that it reconstructs `x` under `mask`.
/// Output-color blocks and noise buffers never change.
#[allow(clippy::too_many_arguments)]
pub fn tune_pivotal(
    x: &Image,
    inv: &InversionResult,
    child: &ParameterVector,
    spec: &GeneratorSpec,
    mask: &WeightedMask,
    embedder: &dyn FaceEmbedder,
    net: &PerceptualNet,
    cfg: &TmtConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    check_resolution(x, spec)?;
    mask.check_matches(x)?;
    child.check_spec(spec)?;
    inv.code.check_len(spec)?;
    if inv.code.space != LatentSpace::W {
        return Err(Error::InvalidInput("pivot must be a W-space code".into()));
    }
    let dev = Device::Cpu;
    let mut all = to_tensors(child, &dev, DType::F32)?;
    let mut vars: BTreeMap<String, Var> = BTreeMap::new();
    for info in spec.block_layout() {
        if info.is_tunable() && !spec.is_rgb_block(&info.name) {
            let t = all.remove(&info.name).expect("layout block");
            vars.insert(info.name.clone(), Var::from_tensor(&t)?);
        }
    }
    let frozen = all;
    let current = |vars: &BTreeMap<String, Var>| -> TensorMap {
        let mut m = frozen.clone();
        for (k, v) in vars {
            m.insert(k.clone(), v.as_tensor().clone());
        }
        m
    };
    let w = Tensor::from_slice(&inv.code.values, (1, spec.latent_dim), &dev)?;
    let target = x.to_tensor(&dev, DType::F32)?;
    let m = mask.to_tensor(&dev, DType::F32)?;
    let target_emb = if cfg.id_loss_weight > 0.0 && embedder.detect(x) {
        Some(embedder.embed_tensor(&target)?.detach())
    } else {
        None
    };
    let mut opt = adam(vars.values().cloned().collect(), cfg.lr)?;
    let mut trace = Vec::new();
    let mut early_stopped = false;
    for step in 0..=cfg.max_steps {
        let map = current(&vars);
        let img = Generator::new(spec, &map).synthesis(&w)?;
        let perceptual = masked_perceptual_loss(net, &img, &target, &m)?;
        let pixel = masked_pixel_loss(&img, &target, &m)?;
        let mut loss =
            ((&perceptual * cfg.perceptual_loss_weight)? + (&pixel * cfg.pixel_loss_weight)?)?;
        let mut identity = None;
        if let Some(te) = &target_emb {
            let e = embedder.embed_tensor(&img)?;
            let l = ((te * e)?.sum_all()?.neg()? + 1.0)?;
            identity = Some(nn::scalar(&l)?);
            loss = (loss + (l * cfg.id_loss_weight)?)?;
        }
        let entry = TuneStep {
            step,
            perceptual: nn::scalar(&perceptual)?,
            pixel: nn::scalar(&pixel)?,
            identity,
        };
        let total = nn::scalar(&loss)?;
        if !total.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                detail: "tuning loss is not finite".into(),
            });
        }
        trace.push(entry);
        if entry.perceptual < cfg.lpips_stop_threshold {
            early_stopped = true;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        opt.backward_step(&loss)?;
    }
    let mut out = child.clone();
    for (k, v) in &vars {
        out.set_block(k, v.as_tensor().flatten_all()?.to_vec1::<f32>()?)?;
    }
    for name in &spec.rgb_block_names {
        if !out.block(name)?.bit_eq(child.block(name)?) {
            return Err(Error::FrozenBlockViolation(name.clone()));
        }
    }
    if !out.all_finite() {
        return Err(Error::Divergence {
            iteration: trace.len(),
            detail: "tuned weights are not finite".into(),
        });
    }
    Ok(TuneResult {
        params: out,
        trace,
        early_stopped,
    })
}

/// Render the pivot in every target decade with the offset added to that decade's weights.
pub fn transform_across_decades(
    inv: &InversionResult,
    offset: &TmtOffset,
    family: &GeneratorFamily,
    targets: &[Decade],
) -> Result<BTreeMap<Decade, Image>> {
    if offset.spec_hash() != family.spec_hash() {
        return Err(Error::IncompatibleParameters {
            expected: family.spec_hash(),
            found: offset.spec_hash().to_string(),
        });
    }
    let mut out = BTreeMap::new();
    for d in targets {
        let base = family.child(*d)?;
        let tuned = offset_apply(base, offset, &family.spec)?;
        out.insert(*d, synthesize(&inv.code, &tuned, &family.spec)?);
    }
    Ok(out)
}
