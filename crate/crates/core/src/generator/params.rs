use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::{BlockRole, GeneratorSpec, MAPPING_LR_MULT};
use crate::decade::Decade;
use crate::error::{Error, Result};

/// One named, shaped array of generator weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Block {
    pub fn new(shape: Vec<usize>, mut data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "block of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        canonicalize_zeros(&mut data);
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn bit_eq(&self, other: &Block) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Negative zero carries no meaning in a weight tensor; folding it into +0 keeps
/// offset arithmetic exact on zero-valued entries.
fn canonicalize_zeros(data: &mut [f32]) {
    for v in data {
        if *v == 0.0 {
            *v = 0.0;
        }
    }
}

/// The full weight set of one generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    blocks: BTreeMap<String, Block>,
    spec_hash: String,
}

impl ParameterVector {
    /// Assemble from blocks, checking names and shapes against `spec`.
    pub fn from_blocks(spec: &GeneratorSpec, mut blocks: BTreeMap<String, Block>) -> Result<Self> {
        let layout = spec.block_layout();
        if blocks.len() != layout.len() {
            for name in blocks.keys() {
                if !layout.iter().any(|b| &b.name == name) {
                    return Err(Error::InvalidInput(format!("unexpected block `{name}`")));
                }
            }
        }
        for info in &layout {
            let block = blocks
                .get_mut(&info.name)
                .ok_or_else(|| Error::MissingBlock(info.name.clone()))?;
            if block.shape != info.shape {
                return Err(Error::ShapeMismatch {
                    block: info.name.clone(),
                    expected: info.shape.clone(),
                    found: block.shape.clone(),
                });
            }
            canonicalize_zeros(&mut block.data);
        }
        Ok(Self {
            blocks,
            spec_hash: spec.spec_hash(),
        })
    }

    /// Fresh weights: unit-normal kernels (equalized learning rate), zero biases,
    /// unit style biases, zero noise strengths, unit-normal noise buffers.
    pub fn init(spec: &GeneratorSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = BTreeMap::new();
        for info in spec.block_layout() {
            let n = info.numel();
            let name = info.name.as_str();
            let data: Vec<f32> = if name.ends_with("affine.bias") {
                vec![1.0; n]
            } else if name.ends_with(".bias") || name.ends_with("noise_strength") {
                vec![0.0; n]
            } else {
                let scale = if info.role == BlockRole::Mapping {
                    1.0 / MAPPING_LR_MULT as f32
                } else {
                    1.0
                };
                (0..n)
                    .map(|_| {
                        let v: f32 = StandardNormal.sample(&mut rng);
                        v * scale
                    })
                    .collect()
            };
            blocks.insert(
                info.name.clone(),
                Block {
                    shape: info.shape,
                    data,
                },
            );
        }
        Self {
            blocks,
            spec_hash: spec.spec_hash(),
        }
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn blocks(&self) -> &BTreeMap<String, Block> {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::MissingBlock(name.to_string()))
    }

    /// Replace one block's values; the shape must not change.
    pub fn set_block(&mut self, name: &str, data: Vec<f32>) -> Result<()> {
        let block = self
            .blocks
            .get_mut(name)
            .ok_or_else(|| Error::MissingBlock(name.to_string()))?;
        if block.data.len() != data.len() {
            return Err(Error::ShapeMismatch {
                block: name.to_string(),
                expected: block.shape.clone(),
                found: vec![data.len()],
            });
        }
        block.data = data;
        canonicalize_zeros(&mut block.data);
        Ok(())
    }

    pub fn check_spec(&self, spec: &GeneratorSpec) -> Result<()> {
        let expected = spec.spec_hash();
        if self.spec_hash != expected {
            return Err(Error::IncompatibleParameters {
                expected,
                found: self.spec_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParameterVector) -> Result<()> {
        if self.spec_hash != other.spec_hash {
            return Err(Error::IncompatibleParameters {
                expected: self.spec_hash.clone(),
                found: other.spec_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .values()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    /// Bitwise equality over every block.
    pub fn bit_eq(&self, other: &ParameterVector) -> bool {
        self.spec_hash == other.spec_hash
            && self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .all(|(k, b)| other.blocks.get(k).is_some_and(|o| b.bit_eq(o)))
    }

    /// Names of blocks whose bits differ between `self` and `other`.
    pub fn differing_blocks(&self, other: &ParameterVector) -> Vec<String> {
        self.blocks
            .iter()
            .filter(|(k, b)| !other.blocks.get(*k).is_some_and(|o| b.bit_eq(o)))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Which latent space a code lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSpace {
    Z,
    W,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub values: Vec<f32>,
    pub space: LatentSpace,
}

impl LatentCode {
    pub fn new(values: Vec<f32>, space: LatentSpace) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "latent code has non-finite components".into(),
            ));
        }
        Ok(Self { values, space })
    }

    /// Standard-normal Z sample.
    pub fn sample_z(spec: &GeneratorSpec, rng: &mut impl rand::Rng) -> Self {
        let values = (0..spec.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self {
            values,
            space: LatentSpace::Z,
        }
    }

    pub fn check_len(&self, spec: &GeneratorSpec) -> Result<()> {
        if self.values.len() != spec.latent_dim {
            return Err(Error::InvalidInput(format!(
                "latent code has {} components, spec needs {}",
                self.values.len(),
                spec.latent_dim
            )));
        }
        Ok(())
    }
}

/// One block of an offset, kept in double precision so that adding it back to
/// the base reproduces the tuned single-precision weights exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetBlock {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameter-space offset learnt on one decade and applicable to any decade.
#[derive(Debug, Clone, PartialEq)]
pub struct TmtOffset {
    deltas: BTreeMap<String, OffsetBlock>,
    base_decade: Option<Decade>,
    spec_hash: String,
}

impl TmtOffset {
    pub fn zeros(spec: &GeneratorSpec, base_decade: Option<Decade>) -> Self {
        let deltas = spec
            .block_layout()
            .into_iter()
            .filter(|b| b.is_tunable())
            .map(|b| {
                let n = b.numel();
                (
                    b.name,
                    OffsetBlock {
                        shape: b.shape,
                        data: vec![0.0; n],
                    },
                )
            })
            .collect();
        Self {
            deltas,
            base_decade,
            spec_hash: spec.spec_hash(),
        }
    }

    /// Assemble from stored blocks, enforcing the tunable set and zero output-color deltas.
    pub fn from_blocks(
        spec: &GeneratorSpec,
        deltas: BTreeMap<String, OffsetBlock>,
        base_decade: Option<Decade>,
    ) -> Result<Self> {
        let tunable: Vec<_> = spec
            .block_layout()
            .into_iter()
            .filter(|b| b.is_tunable())
            .collect();
        if deltas.len() != tunable.len() {
            return Err(Error::InvalidInput(format!(
                "offset has {} blocks, spec has {} tunable blocks",
                deltas.len(),
                tunable.len()
            )));
        }
        for info in &tunable {
            let d = deltas
                .get(&info.name)
                .ok_or_else(|| Error::MissingBlock(info.name.clone()))?;
            if d.shape != info.shape {
                return Err(Error::ShapeMismatch {
                    block: info.name.clone(),
                    expected: info.shape.clone(),
                    found: d.shape.clone(),
                });
            }
            if spec.is_rgb_block(&info.name) && d.data.iter().any(|v| *v != 0.0) {
                return Err(Error::FrozenBlockViolation(info.name.clone()));
            }
        }
        Ok(Self {
            deltas,
            base_decade,
            spec_hash: spec.spec_hash(),
        })
    }

    pub fn deltas(&self) -> &BTreeMap<String, OffsetBlock> {
        &self.deltas
    }

    pub fn base_decade(&self) -> Option<Decade> {
        self.base_decade
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn is_zero(&self) -> bool {
        self.deltas
            .values()
            .all(|b| b.data.iter().all(|v| *v == 0.0))
    }

    /// Flattened deltas over the named blocks, in block-name order.
    pub fn flatten_where(&self, keep: impl Fn(&str) -> bool) -> Vec<f64> {
        self.deltas
            .iter()
            .filter(|(k, _)| keep(k))
            .flat_map(|(_, b)| b.data.iter().copied())
            .collect()
    }
}

#[inline]
fn add_exact(base: f32, delta: f64) -> f32 {
    (base as f64 + delta) as f32
}

/// Element-wise `tuned - base` over every tunable block.
///
/// Fails if any output-color block differs, or if some element's difference cannot be
/// added back to `base` bit-exactly (only possible when a tuned weight is nonzero yet
/// more than 2^29 times smaller in magnitude than its base value).
pub fn offset_diff(
    tuned: &ParameterVector,
    base: &ParameterVector,
    spec: &GeneratorSpec,
    base_decade: Option<Decade>,
) -> Result<TmtOffset> {
    tuned.check_compatible(base)?;
    base.check_spec(spec)?;
    let mut deltas = BTreeMap::new();
    for info in spec.block_layout() {
        let t = tuned.block(&info.name)?;
        let b = base.block(&info.name)?;
        if t.shape != b.shape {
            return Err(Error::ShapeMismatch {
                block: info.name.clone(),
                expected: b.shape.clone(),
                found: t.shape.clone(),
            });
        }
        if !info.is_tunable() {
            if !t.bit_eq(b) {
                return Err(Error::FrozenBlockViolation(info.name.clone()));
            }
            continue;
        }
        let data: Vec<f64> = if spec.is_rgb_block(&info.name) {
            if !t.bit_eq(b) {
                return Err(Error::FrozenBlockViolation(info.name.clone()));
            }
            vec![0.0; t.data.len()]
        } else {
            let mut out = Vec::with_capacity(t.data.len());
            for (&tv, &bv) in t.data.iter().zip(&b.data) {
                let d = tv as f64 - bv as f64;
                if add_exact(bv, d).to_bits() != tv.to_bits() {
                    return Err(Error::Numeric(format!(
                        "offset entry in `{}` is not exactly representable ({tv:e} vs base {bv:e})",
                        info.name
                    )));
                }
                out.push(d);
            }
            out
        };
        deltas.insert(
            info.name.clone(),
            OffsetBlock {
                shape: t.shape.clone(),
                data,
            },
        );
    }
    Ok(TmtOffset {
        deltas,
        base_decade,
        spec_hash: spec.spec_hash(),
    })
}

/// Element-wise `base + offset`. Output-color blocks and noise buffers are copied from `base`.
pub fn offset_apply(
    base: &ParameterVector,
    offset: &TmtOffset,
    spec: &GeneratorSpec,
) -> Result<ParameterVector> {
    base.check_spec(spec)?;
    if offset.spec_hash != base.spec_hash {
        return Err(Error::IncompatibleParameters {
            expected: base.spec_hash.clone(),
            found: offset.spec_hash.clone(),
        });
    }
    let mut out = base.clone();
    for (name, delta) in &offset.deltas {
        if spec.is_rgb_block(name) {
            continue;
        }
        let block = out
            .blocks
            .get_mut(name)
            .ok_or_else(|| Error::MissingBlock(name.clone()))?;
        if block.shape != delta.shape {
            return Err(Error::ShapeMismatch {
                block: name.clone(),
                expected: block.shape.clone(),
                found: delta.shape.clone(),
            });
        }
        for (v, &d) in block.data.iter_mut().zip(&delta.data) {
            let r = add_exact(*v, d);
            if !r.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite weight in `{name}` after offset"
                )));
            }
            *v = r;
        }
        canonicalize_zeros(&mut block.data);
    }
    Ok(out)
}

/// Blend two generators: blocks at or below `cut` come from `child`, everything else
/// (finer synthesis blocks and the mapping network) from `parent`.
pub fn layer_swap_at(
    child: &ParameterVector,
    parent: &ParameterVector,
    spec: &GeneratorSpec,
    cut: usize,
) -> Result<ParameterVector> {
    child.check_compatible(parent)?;
    parent.check_spec(spec)?;
    let mut out = parent.clone();
    for info in spec.block_layout() {
        if info.resolution().is_some_and(|r| r <= cut) {
            out.blocks
                .insert(info.name.clone(), child.block(&info.name)?.clone());
        }
    }
    Ok(out)
}

/// [`layer_swap_at`] at `GeneratorSpec::coarse_cut`.
pub fn layer_swap(
    child: &ParameterVector,
    parent: &ParameterVector,
    spec: &GeneratorSpec,
) -> Result<ParameterVector> {
    layer_swap_at(child, parent, spec, spec.coarse_cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec() -> GeneratorSpec {
        GeneratorSpec::toy(8)
    }

    fn perturbed(
        p: &ParameterVector,
        spec: &GeneratorSpec,
        seed: u64,
        scale: f32,
    ) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = p.clone();
        for info in spec.block_layout() {
            if !info.is_tunable() || spec.is_rgb_block(&info.name) {
                continue;
            }
            let data = p
                .block(&info.name)
                .unwrap()
                .data
                .iter()
                .map(|v| v + rng.gen_range(-scale..scale))
                .collect();
            out.set_block(&info.name, data).unwrap();
        }
        out
    }

    #[test]
    fn self_diff_is_zero_and_self_swap_is_identity() {
        let s = spec();
        let p = ParameterVector::init(&s, 1);
        assert!(offset_diff(&p, &p, &s, None).unwrap().is_zero());
        assert!(layer_swap(&p, &p, &s).unwrap().bit_eq(&p));
    }

    #[test]
    fn zero_offset_leaves_base() {
        let s = spec();
        let p = ParameterVector::init(&s, 2);
        let z = TmtOffset::zeros(&s, None);
        assert!(offset_apply(&p, &z, &s).unwrap().bit_eq(&p));
    }

    #[test]
    fn swap_below_minimum_cut_is_parent() {
        let s = spec();
        let c = ParameterVector::init(&s, 3);
        let p = ParameterVector::init(&s, 4);
        assert!(layer_swap_at(&c, &p, &s, 2).unwrap().bit_eq(&p));
    }

    #[test]
    fn swap_takes_coarse_from_child_fine_from_parent() {
        // 8x8 spec: resolutions 4 and 8, cut at 4.
        let mut s = spec();
        s.coarse_cut = 4;
        s.validate().unwrap();
        let mut c = ParameterVector::init(&s, 0);
        let mut p = c.clone();
        for info in s.block_layout() {
            let n = info.numel();
            c.set_block(&info.name, vec![1.0; n]).unwrap();
            p.set_block(&info.name, vec![2.0; n]).unwrap();
        }
        let out = layer_swap(&c, &p, &s).unwrap();
        for info in s.block_layout() {
            let expect = match info.resolution() {
                Some(4) => 1.0,
                _ => 2.0,
            };
            assert!(
                out.block(&info.name)
                    .unwrap()
                    .data
                    .iter()
                    .all(|v| *v == expect),
                "{}",
                info.name
            );
        }
        assert!(layer_swap(&c, &p, &s).unwrap().bit_eq(&out));
    }

    #[test]
    fn frozen_block_change_is_rejected() {
        let s = spec();
        let base = ParameterVector::init(&s, 5);
        let mut tuned = base.clone();
        let name = &s.rgb_block_names[0];
        let mut d = tuned.block(name).unwrap().data.clone();
        d[0] += 0.5;
        tuned.set_block(name, d).unwrap();
        assert!(matches!(
            offset_diff(&tuned, &base, &s, None),
            Err(Error::FrozenBlockViolation(_))
        ));
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let a = ParameterVector::init(&GeneratorSpec::toy(8), 0);
        let s16 = GeneratorSpec::toy(16);
        let b = ParameterVector::init(&s16, 0);
        assert!(matches!(
            layer_swap(&a, &b, &s16),
            Err(Error::IncompatibleParameters { .. })
        ));
    }

    #[test]
    fn diff_matches_elementwise_subtraction() {
        let s = spec();
        for seed in 0..10 {
            let base = ParameterVector::init(&s, seed);
            let tuned = perturbed(&base, &s, seed + 100, 0.3);
            let off = offset_diff(&tuned, &base, &s, None).unwrap();
            for (name, d) in off.deltas() {
                let t = &tuned.block(name).unwrap().data;
                let b = &base.block(name).unwrap().data;
                for i in 0..t.len() {
                    assert_eq!(d.data[i], t[i] as f64 - b[i] as f64);
                }
            }
            assert!(offset_apply(&base, &off, &s).unwrap().bit_eq(&tuned));
        }
    }

    #[test]
    fn transfer_preserves_base_difference() {
        let s = spec();
        let base = ParameterVector::init(&s, 7);
        let other = perturbed(&base, &s, 8, 1.0);
        let tuned = perturbed(&base, &s, 9, 0.01);
        let off = offset_diff(&tuned, &base, &s, None).unwrap();
        let a = offset_apply(&base, &off, &s).unwrap();
        let b = offset_apply(&other, &off, &s).unwrap();
        for info in s.block_layout() {
            let (a, b) = (
                &a.block(&info.name).unwrap().data,
                &b.block(&info.name).unwrap().data,
            );
            let (x, y) = (
                &base.block(&info.name).unwrap().data,
                &other.block(&info.name).unwrap().data,
            );
            for i in 0..a.len() {
                // Differences agree up to single-precision rounding of each sum.
                let lhs = b[i] as f64 - a[i] as f64;
                let rhs = y[i] as f64 - x[i] as f64;
                let tol = 2.0 * f32::EPSILON as f64 * (a[i].abs().max(b[i].abs()) as f64);
                assert!((lhs - rhs).abs() <= tol, "{} {lhs} {rhs}", info.name);
            }
        }
    }

    #[test]
    fn negative_zero_roundtrips() {
        let s = spec();
        let base = ParameterVector::init(&s, 1);
        let mut tuned = base.clone();
        tuned
            .set_block("mapping.0.bias", vec![-0.0; s.latent_dim])
            .unwrap();
        let off = offset_diff(&tuned, &base, &s, None).unwrap();
        assert!(offset_apply(&base, &off, &s).unwrap().bit_eq(&tuned));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn apply_inverts_diff(seed in any::<u64>(), base_scale in 1e-3f32..1e3, tuned_scale in 1e-3f32..1e3) {
            let s = spec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut base = ParameterVector::init(&s, seed);
            let mut tuned = base.clone();
            for info in s.block_layout() {
                if s.is_rgb_block(&info.name) || !info.is_tunable() { continue; }
                let n = info.numel();
                let b: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * base_scale).collect();
                let t: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * tuned_scale).collect();
                base.set_block(&info.name, b).unwrap();
                tuned.set_block(&info.name, t).unwrap();
            }
            match offset_diff(&tuned, &base, &s, None) {
                Ok(off) => prop_assert!(offset_apply(&base, &off, &s).unwrap().bit_eq(&tuned)),
                Err(Error::Numeric(_)) => {
                    // Only legal in the extreme magnitude-ratio regime.
                    let extreme = tuned.blocks().iter().any(|(k, t)| {
                        let b = &base.block(k).unwrap().data;
                        t.data.iter().zip(b).any(|(t, b)| *t != 0.0 && t.abs() < b.abs() * 2f32.powi(-28))
                    });
                    prop_assert!(extreme);
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
