//! Fixed random-weight convolutional feature stack used as a perceptual distance
//! and as the feature extractor for distribution metrics.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;
use crate::image::Image;
use crate::nn::{self, TensorMap, VarSet};

pub const DEFAULT_PERCEPTUAL_SEED: u64 = 0x5eed_1295;

const WIDTHS: [usize; 3] = [16, 32, 32];

/// Seed-pinned three-stage convolutional stack. Weights never train.
#[derive(Debug, Clone)]
pub struct PerceptualNet {
    params: TensorMap,
}

impl PerceptualNet {
    pub fn new(seed: u64) -> Result<Self> {
        let mut layout = Vec::new();
        let mut cin = 3;
        for (i, &c) in WIDTHS.iter().enumerate() {
            layout.push((format!("l{i}.weight"), vec![c, cin, 3, 3]));
            cin = c;
        }
        let vars = VarSet::init(&layout, seed, &Device::Cpu)?;
        Ok(Self {
            params: vars.snapshot(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        WIDTHS[WIDTHS.len() - 1]
    }

    fn stages(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(WIDTHS.len());
        let mut h = x.clone();
        for i in 0..WIDTHS.len() {
            if i > 0 {
                let (_, _, hh, _) = h.dims4()?;
                if hh >= 2 {
                    h = nn::downsample2x(&h)?;
                }
            }
            let w = nn::get(&self.params, &format!("l{i}.weight"))?.to_dtype(x.dtype())?;
            h = nn::lrelu(&nn::conv(&h, &w, None)?)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Per-sample distance `[B]`: channel-normalized squared feature differences,
    /// averaged spatially and summed over stages.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let fa = self.stages(a)?;
        let fb = self.stages(b)?;
        let mut total: Option<Tensor> = None;
        for (x, y) in fa.iter().zip(&fb) {
            let nx = unit_channels(x)?;
            let ny = unit_channels(y)?;
            let d = (nx - ny)?.sqr()?.sum(1)?.mean((1, 2))?;
            total = Some(match total {
                None => d,
                Some(t) => (t + d)?,
            });
        }
        Ok(total.expect("at least one stage"))
    }

    /// Spatially pooled last-stage features `[B, feature_dim]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let stages = self.stages(x)?;
        Ok(stages[stages.len() - 1].mean((2, 3))?)
    }

    pub fn image_distance(&self, a: &Image, b: &Image) -> Result<f32> {
        let ta = a.to_tensor(&Device::Cpu, DType::F32)?;
        let tb = b.to_tensor(&Device::Cpu, DType::F32)?;
        Ok(self.distance(&ta, &tb)?.to_vec1::<f32>()?[0])
    }

    /// Features for a batch of images as rows.
    pub fn image_features(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let t = Image::batch_tensor(chunk, &Device::Cpu, DType::F32)?;
            let f = self.features(&t)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            rows.extend(f);
        }
        Ok(rows)
    }
}

fn unit_channels(x: &Tensor) -> Result<Tensor> {
    let n = (x.sqr()?.sum_keepdim(1)? + 1e-10)?.sqrt()?;
    Ok(x.broadcast_div(&n)?)
}
