use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, TensorMap, VarSet};

const WORK_RES: usize = 16;
const WIDTHS: [usize; 2] = [8, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            batch: 32,
            lr: 2e-3,
            seed: 11,
        }
    }
}

/// Convolutional decade predictor over a fixed label set.
#[derive(Debug, Clone)]
pub struct DecadeClassifier {
    params: TensorMap,
    labels: Vec<Decade>,
}

fn layout(n_classes: usize) -> Vec<(String, Vec<usize>)> {
    let mut l = Vec::new();
    let mut cin = 3;
    for (i, &c) in WIDTHS.iter().enumerate() {
        l.push((format!("conv{i}.weight"), vec![c, cin, 3, 3]));
        l.push((format!("conv{i}.bias"), vec![c]));
        cin = c;
    }
    l.push(("fc.weight".into(), vec![n_classes, cin * 16]));
    l.push(("fc.bias".into(), vec![n_classes]));
    l
}

fn logits(params: &TensorMap, x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h != w || !h.is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "classifier input must be square power-of-two, got {h}x{w}"
        )));
    }
    let mut y = x.clone();
    let mut r = h;
    while r > WORK_RES {
        y = nn::downsample2x(&y)?;
        r /= 2;
    }
    while r < WORK_RES {
        y = nn::upsample2x(&y)?;
        r *= 2;
    }
    for i in 0..WIDTHS.len() {
        let w = nn::get(params, &format!("conv{i}.weight"))?;
        let b = nn::get(params, &format!("conv{i}.bias"))?;
        y = nn::downsample2x(&nn::lrelu(&nn::conv(&y, w, Some(b))?)?)?;
    }
    let y = y.flatten_from(1)?;
    nn::linear(
        &y,
        nn::get(params, "fc.weight")?,
        Some(nn::get(params, "fc.bias")?),
        1.0,
    )
}

impl DecadeClassifier {
    pub fn train(data: &[(Image, Decade)], cfg: &ClassifierTrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("classifier training set".into()));
        }
        let mut labels: Vec<Decade> = data.iter().map(|(_, d)| *d).collect();
        labels.sort();
        labels.dedup();
        let dev = Device::Cpu;
        let vars = VarSet::init(&layout(labels.len()), cfg.seed, &dev)?;
        let mut opt = AdamW::new(
            vars.vars(),
            ParamsAdamW {
                lr: cfg.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        for _ in 0..cfg.iterations {
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
            let target: Vec<u32> = idx
                .iter()
                .map(|i| labels.binary_search(&data[*i].1).expect("known label") as u32)
                .collect();
            let x = Image::batch_tensor(&imgs, &dev, DType::F32)?;
            let t = Tensor::from_vec(target, idx.len(), &dev)?;
            let loss = candle_nn::loss::cross_entropy(&logits(&vars.tensors(), &x)?, &t)?;
            opt.backward_step(&loss)?;
        }
        Ok(Self {
            params: vars.snapshot(),
            labels,
        })
    }

    pub fn labels(&self) -> &[Decade] {
        &self.labels
    }

    pub fn predict(&self, images: &[Image]) -> Result<Vec<Decade>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = Image::batch_tensor(images, &Device::Cpu, DType::F32)?;
        let arg: Vec<u32> = logits(&self.params, &x)?.argmax(1)?.to_vec1()?;
        Ok(arg.into_iter().map(|i| self.labels[i as usize]).collect())
    }

    /// Weights go to `<path>` and labels to `<path>.labels.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_safetensors(&self.params, path)?;
        std::fs::write(labels_path(path), serde_json::to_vec(&self.labels)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = nn::load_safetensors(path)?;
        let labels: Vec<Decade> = serde_json::from_slice(&std::fs::read(labels_path(path))?)?;
        for (name, shape) in layout(labels.len()) {
            let t = nn::get(&params, &name)?;
            if t.dims() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    block: name,
                    expected: shape,
                    found: t.dims().to_vec(),
                });
            }
        }
        Ok(Self { params, labels })
    }
}

fn labels_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".labels.json");
    p.into()
}
