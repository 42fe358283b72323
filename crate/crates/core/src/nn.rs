//! Small layer helpers on top of candle tensors, all with equalized learning rate:
//! kernels are stored unit-scale and multiplied by `1/sqrt(fan_in)` at run time.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Named tensors that make up one network at run time.
pub type TensorMap = BTreeMap<String, Tensor>;

pub const LRELU_SLOPE: f64 = 0.2;

pub fn get<'a>(t: &'a TensorMap, name: &str) -> Result<&'a Tensor> {
    t.get(name)
        .ok_or_else(|| Error::MissingBlock(name.to_string()))
}

/// Leaky ReLU scaled by sqrt(2) to preserve signal magnitude.
pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    let y = candle_nn::ops::leaky_relu(x, LRELU_SLOPE)?;
    Ok((y * std::f64::consts::SQRT_2)?)
}

/// `x @ (w * gain)^T + b * lr_mult` for `w: [out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>, lr_mult: f64) -> Result<Tensor> {
    let (_, fan_in) = w.dims2()?;
    let gain = lr_mult / (fan_in as f64).sqrt();
    let y = x.matmul(&(w * gain)?.t()?)?;
    Ok(match b {
        Some(b) => y.broadcast_add(&(b * lr_mult)?.unsqueeze(0)?)?,
        None => y,
    })
}

/// Same-padded convolution for `w: [out, in, k, k]`.
pub fn conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (cout, cin, k, _) = w.dims4()?;
    let gain = 1.0 / ((cin * k * k) as f64).sqrt();
    let y = x.conv2d(&(w * gain)?, k / 2, 1, 1, 1)?;
    Ok(match b {
        Some(b) => y.broadcast_add(&b.reshape((1, cout, 1, 1))?)?,
        None => y,
    })
}

pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

pub fn downsample2x(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

/// Divide each row by its RMS.
pub fn pixel_norm(x: &Tensor) -> Result<Tensor> {
    let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(x.broadcast_div(&(ms + 1e-8)?.sqrt()?)?)
}

/// Row-wise L2 normalization.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(D::Minus1)?;
    Ok(x.broadcast_div(&(n + 1e-12)?.sqrt()?)?)
}

/// Trainable variables keyed by name, with a shape table for (de)serialization.
#[derive(Debug, Clone)]
pub struct VarSet {
    vars: BTreeMap<String, Var>,
}

impl VarSet {
    pub fn new() -> Self {
        Self {
            vars: BTreeMap::new(),
        }
    }

    /// Unit normal for kernels, zeros for biases.
    pub fn init(layout: &[(String, Vec<usize>)], seed: u64, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = BTreeMap::new();
        for (name, shape) in layout {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = if name.ends_with("bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            };
            let t = Tensor::from_vec(data, shape.as_slice(), device)?;
            vars.insert(name.clone(), Var::from_tensor(&t)?);
        }
        Ok(Self { vars })
    }

    pub fn from_tensors(tensors: &TensorMap) -> Result<Self> {
        let vars = tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), Var::from_tensor(t)?)))
            .collect::<Result<_>>()?;
        Ok(Self { vars })
    }

    pub fn insert(&mut self, name: String, var: Var) {
        self.vars.insert(name, var);
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn tensors(&self) -> TensorMap {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Current values detached from the graph.
    pub fn snapshot(&self) -> TensorMap {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().detach()))
            .collect()
    }

    pub fn to_blocks(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor();
                let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((k.clone(), (t.dims().to_vec(), data)))
            })
            .collect()
    }

    pub fn from_blocks(
        blocks: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
        device: &Device,
    ) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (k, (shape, data)) in blocks {
            let t = Tensor::from_slice(data, shape.as_slice(), device)?;
            vars.insert(k.clone(), Var::from_tensor(&t)?);
        }
        Ok(Self { vars })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

impl Default for VarSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Scalar value of a rank-0 tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// True when every value is finite.
pub fn all_finite(t: &Tensor) -> Result<bool> {
    let v = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

pub fn save_safetensors(map: &TensorMap, path: &std::path::Path) -> Result<()> {
    let m: std::collections::HashMap<String, Tensor> =
        map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    candle_core::safetensors::save(&m, path)?;
    Ok(())
}

pub fn load_safetensors(path: &std::path::Path) -> Result<TensorMap> {
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?
        .into_iter()
        .collect())
}
