//! Style-based synthesis network: mapping MLP, modulated/demodulated convolutions,
//! per-layer fixed noise, and skip connections through per-resolution output-color layers.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{LatentCode, LatentSpace, ParameterVector};
use super::spec::{GeneratorSpec, MAPPING_LR_MULT};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, get, TensorMap};

/// Convert every block into a tensor of the requested dtype.
pub fn to_tensors(params: &ParameterVector, device: &Device, dtype: DType) -> Result<TensorMap> {
    params
        .blocks()
        .iter()
        .map(|(name, b)| {
            let t = Tensor::from_slice(&b.data, b.shape.as_slice(), device)?.to_dtype(dtype)?;
            Ok((name.clone(), t))
        })
        .collect()
}

/// Read tensors back into a parameter vector (blocks missing from `tensors` are kept from `like`).
pub fn from_tensors(like: &ParameterVector, tensors: &TensorMap) -> Result<ParameterVector> {
    let mut out = like.clone();
    for (name, t) in tensors {
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        out.set_block(name, data)?;
    }
    Ok(out)
}

/// Differentiable forward passes over a tensor map laid out by `spec`.
pub struct Generator<'a> {
    spec: &'a GeneratorSpec,
    params: &'a TensorMap,
}

impl<'a> Generator<'a> {
    pub fn new(spec: &'a GeneratorSpec, params: &'a TensorMap) -> Self {
        Self { spec, params }
    }

    /// `z: [B, D] -> w: [B, D]`.
    pub fn mapping(&self, z: &Tensor) -> Result<Tensor> {
        let mut x = nn::pixel_norm(z)?;
        for i in 0..self.spec.mapping_layers {
            let w = get(self.params, &format!("mapping.{i}.weight"))?;
            let b = get(self.params, &format!("mapping.{i}.bias"))?;
            x = nn::lrelu(&nn::linear(&x, w, Some(b), MAPPING_LR_MULT)?)?;
        }
        Ok(x)
    }

    fn styles(&self, prefix: &str, w: &Tensor) -> Result<Tensor> {
        let aw = get(self.params, &format!("{prefix}.affine.weight"))?;
        let ab = get(self.params, &format!("{prefix}.affine.bias"))?;
        nn::linear(w, aw, Some(ab), 1.0)
    }

    fn modulated_conv(&self, prefix: &str, x: &Tensor, w: &Tensor, up: bool) -> Result<Tensor> {
        let styles = self.styles(prefix, w)?;
        let weight = get(self.params, &format!("{prefix}.weight"))?;
        let (cout, cin, k, _) = weight.dims4()?;
        let weight = (weight * (1.0 / ((cin * k * k) as f64).sqrt()))?;
        let b = styles.dim(0)?;
        let x = if up { nn::upsample2x(x)? } else { x.clone() };
        let x = x.broadcast_mul(&styles.reshape((b, cin, 1, 1))?)?;
        let y = x.conv2d(&weight, k / 2, 1, 1, 1)?;
        // Demodulation: per-sample output channel norms of the style-scaled kernel.
        let wsq = weight.sqr()?.sum((2, 3))?;
        let dcoef = (styles.sqr()?.matmul(&wsq.t()?)? + 1e-8)?.sqrt()?.recip()?;
        let y = y.broadcast_mul(&dcoef.reshape((b, cout, 1, 1))?)?;
        let noise = get(self.params, &format!("{prefix}.noise_const"))?;
        let strength = get(self.params, &format!("{prefix}.noise_strength"))?;
        let (h, wd) = noise.dims2()?;
        let noise = noise
            .reshape((1, 1, h, wd))?
            .broadcast_mul(&strength.reshape((1, 1, 1, 1))?)?;
        let bias = get(self.params, &format!("{prefix}.bias"))?;
        let y = y
            .broadcast_add(&noise)?
            .broadcast_add(&bias.reshape((1, cout, 1, 1))?)?;
        nn::lrelu(&y)
    }

    fn to_rgb(&self, prefix: &str, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let weight = get(self.params, &format!("{prefix}.weight"))?;
        let (_, cin, _, _) = weight.dims4()?;
        let styles = (self.styles(prefix, w)? * (1.0 / (cin as f64).sqrt()))?;
        let b = styles.dim(0)?;
        let x = x.broadcast_mul(&styles.reshape((b, cin, 1, 1))?)?;
        let bias = get(self.params, &format!("{prefix}.bias"))?;
        let y = x.conv2d(weight, 0, 1, 1, 1)?;
        Ok(y.broadcast_add(&bias.reshape((1, 3, 1, 1))?)?)
    }

    /// Pre-activation output `[B, 3, R, R]` (sum of upsampled output-color contributions).
    pub fn synthesis_linear(&self, w: &Tensor) -> Result<Tensor> {
        let b = w.dim(0)?;
        let cst = get(self.params, "synthesis.b4.const")?;
        let (c, h, wd) = cst.dims3()?;
        let mut x = cst
            .unsqueeze(0)?
            .broadcast_as((b, c, h, wd))?
            .contiguous()?;
        let mut img: Option<Tensor> = None;
        for res in self.spec.resolutions() {
            let p = format!("synthesis.b{res}");
            if res == 4 {
                x = self.modulated_conv(&format!("{p}.conv1"), &x, w, false)?;
            } else {
                x = self.modulated_conv(&format!("{p}.conv0"), &x, w, true)?;
                x = self.modulated_conv(&format!("{p}.conv1"), &x, w, false)?;
            }
            let y = self.to_rgb(&format!("{p}.torgb"), &x, w)?;
            img = Some(match img {
                None => y,
                Some(prev) => (nn::upsample2x(&prev)? + y)?,
            });
        }
        img.ok_or_else(|| Error::InvalidSpec("spec has no resolutions".into()))
    }

    /// `w: [B, D] -> image: [B, 3, R, R]` in `(-1, 1)`.
    pub fn synthesis(&self, w: &Tensor) -> Result<Tensor> {
        Ok(self.synthesis_linear(w)?.tanh()?)
    }
}

fn check_inputs(code: &LatentCode, params: &ParameterVector, spec: &GeneratorSpec) -> Result<()> {
    params.check_spec(spec)?;
    code.check_len(spec)?;
    if !params.all_finite() {
        return Err(Error::Numeric(
            "generator weights contain non-finite values".into(),
        ));
    }
    Ok(())
}

fn code_tensor(codes: &[LatentCode], device: &Device, dtype: DType) -> Result<Tensor> {
    let d = codes[0].values.len();
    let flat: Vec<f32> = codes
        .iter()
        .flat_map(|c| c.values.iter().copied())
        .collect();
    Ok(Tensor::from_vec(flat, (codes.len(), d), device)?.to_dtype(dtype)?)
}

/// Route codes into W space (passing Z codes through the mapping network).
pub fn w_tensor(
    codes: &[LatentCode],
    gen: &Generator<'_>,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(codes.len());
    for c in codes {
        let t = code_tensor(std::slice::from_ref(c), device, dtype)?;
        rows.push(match c.space {
            LatentSpace::W => t,
            LatentSpace::Z => gen.mapping(&t)?,
        });
    }
    Ok(Tensor::cat(&rows, 0)?)
}

/// Render one image from a latent code.
pub fn synthesize(
    code: &LatentCode,
    params: &ParameterVector,
    spec: &GeneratorSpec,
) -> Result<Image> {
    let mut out = synthesize_batch(std::slice::from_ref(code), params, spec)?;
    Ok(out.remove(0))
}

pub fn synthesize_batch(
    codes: &[LatentCode],
    params: &ParameterVector,
    spec: &GeneratorSpec,
) -> Result<Vec<Image>> {
    if codes.is_empty() {
        return Ok(Vec::new());
    }
    for c in codes {
        check_inputs(c, params, spec)?;
    }
    let device = Device::Cpu;
    let tensors = to_tensors(params, &device, DType::F32)?;
    let gen = Generator::new(spec, &tensors);
    let w = w_tensor(codes, &gen, &device, DType::F32)?;
    let img = gen.synthesis(&w)?;
    Image::from_batch_tensor(&img)
}

/// Map a Z code to W.
pub fn map_to_w(
    code: &LatentCode,
    params: &ParameterVector,
    spec: &GeneratorSpec,
) -> Result<LatentCode> {
    check_inputs(code, params, spec)?;
    if code.space == LatentSpace::W {
        return Ok(code.clone());
    }
    let device = Device::Cpu;
    let tensors = to_tensors(params, &device, DType::F32)?;
    let gen = Generator::new(spec, &tensors);
    let w = gen.mapping(&code_tensor(
        std::slice::from_ref(code),
        &device,
        DType::F32,
    )?)?;
    LatentCode::new(w.flatten_all()?.to_vec1::<f32>()?, LatentSpace::W)
}

/// Mean of the mapping network's output over `samples` standard-normal inputs.
pub fn mean_w(
    params: &ParameterVector,
    spec: &GeneratorSpec,
    samples: usize,
    seed: u64,
) -> Result<LatentCode> {
    params.check_spec(spec)?;
    let device = Device::Cpu;
    let tensors = to_tensors(params, &device, DType::F32)?;
    let gen = Generator::new(spec, &tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f32> = (0..samples * spec.latent_dim)
        .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
        .collect();
    let z = Tensor::from_vec(z, (samples, spec.latent_dim), &device)?;
    let w = gen.mapping(&z)?.mean(0)?;
    LatentCode::new(w.to_vec1::<f32>()?, LatentSpace::W)
}
