use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::nn::{self, get, TensorMap, VarSet};

/// Residual discriminator mirroring the generator's channel schedule.
#[derive(Debug, Clone)]
pub struct Discriminator {
    vars: VarSet,
    resolutions: Vec<usize>,
}

fn layout(spec: &GeneratorSpec) -> Vec<(String, Vec<usize>)> {
    let top = spec.output_resolution;
    let mut l = vec![
        ("fromrgb.weight".into(), vec![spec.channels(top), 3, 1, 1]),
        ("fromrgb.bias".into(), vec![spec.channels(top)]),
    ];
    let mut res = top;
    while res > 4 {
        let c = spec.channels(res);
        let c_next = spec.channels(res / 2);
        l.push((format!("b{res}.conv0.weight"), vec![c, c, 3, 3]));
        l.push((format!("b{res}.conv0.bias"), vec![c]));
        l.push((format!("b{res}.conv1.weight"), vec![c_next, c, 3, 3]));
        l.push((format!("b{res}.conv1.bias"), vec![c_next]));
        l.push((format!("b{res}.skip.weight"), vec![c_next, c, 1, 1]));
        res /= 2;
    }
    let c4 = spec.channels(4);
    l.push(("b4.conv.weight".into(), vec![c4, c4, 3, 3]));
    l.push(("b4.conv.bias".into(), vec![c4]));
    l.push(("b4.fc.weight".into(), vec![c4, c4 * 16]));
    l.push(("b4.fc.bias".into(), vec![c4]));
    l.push(("b4.out.weight".into(), vec![1, c4]));
    l.push(("b4.out.bias".into(), vec![1]));
    l
}

impl Discriminator {
    pub fn new(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            vars: VarSet::init(&layout(spec), seed, &Device::Cpu)?,
            resolutions: spec.resolutions(),
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.vars()
    }

    /// `[B, 3, R, R] -> [B]` realness scores.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.vars.tensors();
        forward(&p, &self.resolutions, x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_safetensors(&self.vars.snapshot(), path)
    }

    pub fn load(path: &Path, spec: &GeneratorSpec) -> Result<Self> {
        let t = nn::load_safetensors(path)?;
        for (name, shape) in layout(spec) {
            let found = get(&t, &name)?.dims().to_vec();
            if found != shape {
                return Err(Error::ShapeMismatch {
                    block: name,
                    expected: shape,
                    found,
                });
            }
        }
        Ok(Self {
            vars: VarSet::from_tensors(&t)?,
            resolutions: spec.resolutions(),
        })
    }

    /// Copy with every weight cast to `dtype`.
    pub fn with_dtype(&self, dtype: DType) -> Result<Self> {
        let t: TensorMap = self
            .vars
            .snapshot()
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(dtype)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            vars: VarSet::from_tensors(&t)?,
            resolutions: self.resolutions.clone(),
        })
    }

    /// Independent copy whose variables do not alias this one.
    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            vars: VarSet::from_tensors(&self.vars.snapshot())?,
            resolutions: self.resolutions.clone(),
        })
    }
}

fn forward(p: &TensorMap, resolutions: &[usize], x: &Tensor) -> Result<Tensor> {
    let mut h = nn::lrelu(&nn::conv(
        x,
        get(p, "fromrgb.weight")?,
        Some(get(p, "fromrgb.bias")?),
    )?)?;
    for &res in resolutions.iter().rev().filter(|r| **r > 4) {
        let skip = nn::conv(
            &nn::downsample2x(&h)?,
            get(p, &format!("b{res}.skip.weight"))?,
            None,
        )?;
        let y = nn::lrelu(&nn::conv(
            &h,
            get(p, &format!("b{res}.conv0.weight"))?,
            Some(get(p, &format!("b{res}.conv0.bias"))?),
        )?)?;
        let y = nn::lrelu(&nn::conv(
            &y,
            get(p, &format!("b{res}.conv1.weight"))?,
            Some(get(p, &format!("b{res}.conv1.bias"))?),
        )?)?;
        h = ((skip + nn::downsample2x(&y)?)? * std::f64::consts::FRAC_1_SQRT_2)?;
    }
    let y = nn::lrelu(&nn::conv(
        &h,
        get(p, "b4.conv.weight")?,
        Some(get(p, "b4.conv.bias")?),
    )?)?;
    let y = y.flatten_from(1)?;
    let y = nn::lrelu(&nn::linear(
        &y,
        get(p, "b4.fc.weight")?,
        Some(get(p, "b4.fc.bias")?),
        1.0,
    )?)?;
    let y = nn::linear(
        &y,
        get(p, "b4.out.weight")?,
        Some(get(p, "b4.out.bias")?),
        1.0,
    )?;
    Ok(y.squeeze(1)?)
}

/// Surrogate whose gradient with respect to the discriminator weights equals that of
/// the R1 penalty `gamma / 2 * E ||grad_x D(x)||^2`, up to O(eps^2).
///
/// The penalty gradient is `gamma * E[H_{phi x} g]` with `g = grad_x D(x)`. Holding `g`
/// fixed, that is the weight-gradient of the directional derivative of `D` along `g`,
/// taken here by a central difference. Returns `(surrogate, penalty value)`.
pub fn r1_surrogate(d: &Discriminator, real: &Tensor, gamma: f64) -> Result<(Tensor, f64)> {
    let x = Var::from_tensor(&real.detach())?;
    let score = d.forward(x.as_tensor())?.sum_all()?;
    let grads = score.backward()?;
    let g = grads
        .get(x.as_tensor())
        .ok_or_else(|| Error::Numeric("no input gradient for discriminator".into()))?
        .detach();
    let b = real.dim(0)? as f64;
    let sq = nn::scalar(&g.sqr()?.sum_all()?)?;
    let penalty = gamma / 2.0 * sq / b;
    let gmax = nn::scalar(&g.abs()?.max_all()?)?;
    if gmax == 0.0 || !gmax.is_finite() {
        let zero = (d.forward(real)?.sum_all()? * 0.0)?;
        return Ok((zero, penalty));
    }
    let step = if real.dtype() == DType::F64 {
        1e-6
    } else {
        1e-2
    };
    let eps = step / gmax;
    let xp = (real + (&g * eps)?)?;
    let xm = (real - (&g * eps)?)?;
    let diff = (d.forward(&xp)?.sum_all()? - d.forward(&xm)?.sum_all()?)?;
    let surrogate = (diff * (gamma / (2.0 * eps * b)))?;
    Ok((surrogate, penalty))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_have_batch_shape() {
        let spec = GeneratorSpec::toy(16);
        let d = Discriminator::new(&spec, 1).unwrap();
        let x = Tensor::randn(0f32, 1.0, (3, 3, 16, 16), &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x).unwrap().dims(), &[3]);
    }

    #[test]
    fn surrogate_gradient_matches_penalty_finite_difference() {
        // Directional check: perturb all weights along a random direction and compare the
        // change of the penalty value with the surrogate's directional derivative.
        let spec = GeneratorSpec::toy(8);
        // Float64 with tiny steps keeps both differences inside one linear region of
        // the leaky activations.
        let d = Discriminator::new(&spec, 2)
            .unwrap()
            .with_dtype(DType::F64)
            .unwrap();
        let real = Tensor::randn(0f64, 1.0, (2, 3, 8, 8), &Device::Cpu).unwrap();
        let gamma = 0.5;
        let (sur, _) = r1_surrogate(&d, &real, gamma).unwrap();
        let grads = sur.backward().unwrap();
        let vars = d.vars();
        let dirs: Vec<Tensor> = vars
            .iter()
            .map(|v| Tensor::randn(0f64, 1.0, v.as_tensor().dims(), &Device::Cpu).unwrap())
            .collect();
        let mut analytic = 0.0;
        for (v, u) in vars.iter().zip(&dirs) {
            if let Some(g) = grads.get(v.as_tensor()) {
                analytic += nn::scalar(&(g * u).unwrap().sum_all().unwrap()).unwrap();
            }
        }
        let h = 1e-7;
        let penalty_at = |sign: f64| {
            let originals: Vec<Tensor> =
                vars.iter().map(|v| v.as_tensor().copy().unwrap()).collect();
            for ((v, u), o) in vars.iter().zip(&dirs).zip(&originals) {
                v.set(&(o + (u * (sign * h)).unwrap()).unwrap()).unwrap();
            }
            let (_, p) = r1_surrogate(&d, &real, gamma).unwrap();
            for (v, o) in vars.iter().zip(&originals) {
                v.set(o).unwrap();
            }
            p
        };
        let numeric = (penalty_at(1.0) - penalty_at(-1.0)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-6);
        assert!(rel < 1e-3, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn save_load_roundtrip() {
        let spec = GeneratorSpec::toy(8);
        let d = Discriminator::new(&spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.safetensors");
        d.save(&p).unwrap();
        let l = Discriminator::load(&p, &spec).unwrap();
        let x = Tensor::ones((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let a = d.forward(&x).unwrap().to_vec1::<f32>().unwrap();
        let b = l.forward(&x).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        assert!(Discriminator::load(&p, &GeneratorSpec::toy(16)).is_err());
    }
}
