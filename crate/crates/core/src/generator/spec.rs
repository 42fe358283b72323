use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Learning-rate multiplier of the mapping network under equalized learning rate.
pub const MAPPING_LR_MULT: f64 = 0.01;

/// Architecture descriptor of a style-based generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub output_resolution: usize,
    pub latent_dim: usize,
    pub mapping_layers: usize,
    /// Resolution to channel count, for every resolution from 4 up to `output_resolution`.
    pub channel_schedule: BTreeMap<usize, usize>,
    /// Synthesis blocks at or below this resolution are coarse.
    pub coarse_cut: usize,
    pub rgb_block_names: Vec<String>,
}

/// Role of a parameter block inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRole {
    Mapping,
    Synthesis {
        resolution: usize,
    },
    /// Fixed per-layer noise image; part of the checkpoint but never tuned.
    NoiseBuffer {
        resolution: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: BlockRole,
}

impl BlockInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn resolution(&self) -> Option<usize> {
        match self.role {
            BlockRole::Mapping => None,
            BlockRole::Synthesis { resolution } | BlockRole::NoiseBuffer { resolution } => {
                Some(resolution)
            }
        }
    }

    pub fn is_tunable(&self) -> bool {
        !matches!(self.role, BlockRole::NoiseBuffer { .. })
    }
}

impl GeneratorSpec {
    /// Build a spec whose channel count halves per resolution doubling, from `base`
    /// channels at 4x4, never dropping under `min_channels`.
    pub fn halving(
        output_resolution: usize,
        latent_dim: usize,
        mapping_layers: usize,
        base_channels: usize,
        min_channels: usize,
        coarse_cut: usize,
    ) -> Result<Self> {
        let mut schedule = BTreeMap::new();
        let mut res = 4;
        let mut ch = base_channels;
        while res <= output_resolution {
            schedule.insert(res, ch.max(min_channels));
            ch /= 2;
            res *= 2;
        }
        let mut spec = GeneratorSpec {
            output_resolution,
            latent_dim,
            mapping_layers,
            channel_schedule: schedule,
            coarse_cut,
            rgb_block_names: Vec::new(),
        };
        spec.rgb_block_names = spec.default_rgb_block_names();
        spec.validate()?;
        Ok(spec)
    }

    /// 64x64 desk-scale generator: 256 channels at 4x4 halving to 32 at 64x64.
    pub fn desk() -> Self {
        Self::halving(64, 128, 4, 256, 32, 32).expect("desk spec is valid")
    }

    /// Full-scale 256x256 configuration with 512-wide latents and an 8-layer mapping network.
    pub fn full_scale() -> Self {
        let mut schedule = BTreeMap::new();
        let mut res = 4;
        while res <= 256 {
            schedule.insert(res, (16384 / res).min(512));
            res *= 2;
        }
        let mut spec = GeneratorSpec {
            output_resolution: 256,
            latent_dim: 512,
            mapping_layers: 8,
            channel_schedule: schedule,
            coarse_cut: 32,
            rgb_block_names: Vec::new(),
        };
        spec.rgb_block_names = spec.default_rgb_block_names();
        spec
    }

    /// Small generator used by tests and toy experiments.
    pub fn toy(output_resolution: usize) -> Self {
        let cut = (output_resolution / 2).max(4);
        Self::halving(output_resolution, 32, 2, 32, 16, cut).expect("toy spec is valid")
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.channel_schedule.keys().copied().collect()
    }

    pub fn channels(&self, resolution: usize) -> usize {
        self.channel_schedule[&resolution]
    }

    /// Every output-color block of the network.
    pub fn default_rgb_block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for res in self.resolutions() {
            for suffix in ["affine.weight", "affine.bias", "weight", "bias"] {
                names.push(format!("synthesis.b{res}.torgb.{suffix}"));
            }
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.output_resolution;
        if r < 8 || !r.is_power_of_two() {
            return Err(Error::InvalidSpec(format!(
                "output_resolution {r} must be a power of two >= 8"
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidSpec("latent_dim must be positive".into()));
        }
        let mut res = 4;
        while res <= r {
            match self.channel_schedule.get(&res) {
                Some(&c) if c > 0 => {}
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "channel schedule lacks a positive entry for {res}x{res}"
                    )))
                }
            }
            res *= 2;
        }
        if self.channel_schedule.len() != r.trailing_zeros() as usize - 1 {
            return Err(Error::InvalidSpec(
                "channel schedule has entries beyond the output resolution".into(),
            ));
        }
        if !self.channel_schedule.contains_key(&self.coarse_cut) {
            return Err(Error::InvalidSpec(format!(
                "coarse_cut {} is not a schedule resolution",
                self.coarse_cut
            )));
        }
        let names: std::collections::HashSet<String> =
            self.block_layout().into_iter().map(|b| b.name).collect();
        for n in &self.rgb_block_names {
            if !names.contains(n) {
                return Err(Error::InvalidSpec(format!(
                    "unknown output-color block `{n}`"
                )));
            }
        }
        Ok(())
    }

    /// Ordered table of every block the network owns.
    pub fn block_layout(&self) -> Vec<BlockInfo> {
        let d = self.latent_dim;
        let mut out = Vec::new();
        for i in 0..self.mapping_layers {
            out.push(BlockInfo {
                name: format!("mapping.{i}.weight"),
                shape: vec![d, d],
                role: BlockRole::Mapping,
            });
            out.push(BlockInfo {
                name: format!("mapping.{i}.bias"),
                shape: vec![d],
                role: BlockRole::Mapping,
            });
        }
        let mut prev = None;
        for res in self.resolutions() {
            let ch = self.channels(res);
            let syn = BlockRole::Synthesis { resolution: res };
            if res == 4 {
                out.push(BlockInfo {
                    name: "synthesis.b4.const".into(),
                    shape: vec![ch, 4, 4],
                    role: syn,
                });
            }
            let layers: Vec<(&str, usize)> = match prev {
                None => vec![("conv1", ch)],
                Some(p) => vec![("conv0", p), ("conv1", ch)],
            };
            for (layer, cin) in layers {
                let p = format!("synthesis.b{res}.{layer}");
                out.push(BlockInfo {
                    name: format!("{p}.affine.weight"),
                    shape: vec![cin, d],
                    role: syn,
                });
                out.push(BlockInfo {
                    name: format!("{p}.affine.bias"),
                    shape: vec![cin],
                    role: syn,
                });
                out.push(BlockInfo {
                    name: format!("{p}.weight"),
                    shape: vec![ch, cin, 3, 3],
                    role: syn,
                });
                out.push(BlockInfo {
                    name: format!("{p}.bias"),
                    shape: vec![ch],
                    role: syn,
                });
                out.push(BlockInfo {
                    name: format!("{p}.noise_strength"),
                    shape: vec![1],
                    role: syn,
                });
                out.push(BlockInfo {
                    name: format!("{p}.noise_const"),
                    shape: vec![res, res],
                    role: BlockRole::NoiseBuffer { resolution: res },
                });
            }
            let p = format!("synthesis.b{res}.torgb");
            out.push(BlockInfo {
                name: format!("{p}.affine.weight"),
                shape: vec![ch, d],
                role: syn,
            });
            out.push(BlockInfo {
                name: format!("{p}.affine.bias"),
                shape: vec![ch],
                role: syn,
            });
            out.push(BlockInfo {
                name: format!("{p}.weight"),
                shape: vec![3, ch, 1, 1],
                role: syn,
            });
            out.push(BlockInfo {
                name: format!("{p}.bias"),
                shape: vec![3],
                role: syn,
            });
            prev = Some(ch);
        }
        out
    }

    pub fn is_rgb_block(&self, name: &str) -> bool {
        self.rgb_block_names.iter().any(|n| n == name)
    }

    /// Hex checksum of the canonical JSON encoding.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&canonical);
        hex::encode(&digest[..8])
    }
}
