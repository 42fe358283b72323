//! Face segmentation masks, identity embeddings, and masked reconstruction losses.
//!
//! Backends sit behind the [`Segmenter`] and [`FaceEmbedder`] traits. The toy
//! corpus uses an oracle segmenter that replays the generating geometry.

mod embed;
mod mask;
mod perceptual;
mod segment;

pub use embed::{
    cosine_similarity, has_face_signal, CachedEmbedder, ConvEmbedder, EmbedderRegistry,
    EmbedderTrainConfig, EmbeddingVector, FaceEmbedder, FnEmbedder, DEFAULT_EMBEDDING_DIM,
};
pub use mask::{ClassMap, FaceClass, MaskWeights, WeightedMask};
pub use perceptual::{PerceptualNet, DEFAULT_PERCEPTUAL_SEED};
pub use segment::{
    segment_to_mask, CachedSegmenter, OracleSegmenter, Segmenter, SegmenterRegistry,
    UniformSegmenter,
};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Pixel,
    Perceptual,
}

/// Mean of `mask * (a - b)^2` over every element. `mask` is `[B or 1, 1, H, W]`.
pub fn masked_pixel_loss(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let d = (a - b)?.sqr()?.broadcast_mul(&mask.to_dtype(a.dtype())?)?;
    Ok(d.mean_all()?)
}

/// Batch mean of the perceptual distance between the mask-multiplied inputs.
pub fn masked_perceptual_loss(
    net: &PerceptualNet,
    a: &Tensor,
    b: &Tensor,
    mask: &Tensor,
) -> Result<Tensor> {
    let m = mask.to_dtype(a.dtype())?;
    let am = a.broadcast_mul(&m)?;
    let bm = b.broadcast_mul(&m)?;
    Ok(net.distance(&am, &bm)?.mean_all()?)
}

/// Masked reconstruction loss between two images.
pub fn masked_loss(
    a: &Image,
    b: &Image,
    mask: &WeightedMask,
    kind: LossKind,
    net: &PerceptualNet,
) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    mask.check_matches(a)?;
    let dev = Device::Cpu;
    let ta = a.to_tensor(&dev, DType::F64)?;
    let tb = b.to_tensor(&dev, DType::F64)?;
    let tm = mask.to_tensor(&dev, DType::F64)?;
    let loss = match kind {
        LossKind::Pixel => masked_pixel_loss(&ta, &tb, &tm)?,
        LossKind::Perceptual => masked_perceptual_loss(
            net,
            &ta.to_dtype(DType::F32)?,
            &tb.to_dtype(DType::F32)?,
            &tm,
        )?,
    };
    crate::nn::scalar(&loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: &[f32]) -> Image {
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(v);
        }
        Image::new(h, w, data).unwrap()
    }

    fn mask_from(weights: &[f32], h: usize, w: usize) -> WeightedMask {
        WeightedMask {
            class_map: ClassMap::uniform(h, w, FaceClass::Face),
            weights: weights.to_vec(),
        }
    }

    #[test]
    fn two_by_two_hand_example() {
        let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED).unwrap();
        let a = gray(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = gray(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let m = mask_from(&[1.0, 0.0, 1.0, 0.0], 2, 2);
        let l = masked_loss(&a, &b, &m, LossKind::Pixel, &net).unwrap();
        assert!((l - 0.5).abs() < 1e-12, "{l}");
    }

    #[test]
    fn equal_inputs_and_zero_mask_give_zero() {
        let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED).unwrap();
        let a = gray(
            4,
            4,
            &(0..16).map(|i| (i as f32 / 8.0) - 1.0).collect::<Vec<_>>(),
        );
        let b = gray(
            4,
            4,
            &(0..16)
                .map(|i| ((i * 7 % 16) as f32 / 8.0) - 1.0)
                .collect::<Vec<_>>(),
        );
        let ones = mask_from(&[1.0; 16], 4, 4);
        let zeros = mask_from(&[0.0; 16], 4, 4);
        for kind in [LossKind::Pixel, LossKind::Perceptual] {
            assert_eq!(masked_loss(&a, &a, &ones, kind, &net).unwrap(), 0.0);
            assert_eq!(masked_loss(&a, &b, &zeros, kind, &net).unwrap(), 0.0);
        }
        assert!(masked_loss(&a, &b, &ones, LossKind::Perceptual, &net).unwrap() > 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED).unwrap();
        let a = Image::filled(2, 2, [0.0; 3]);
        let b = Image::filled(4, 4, [0.0; 3]);
        let m = mask_from(&[1.0; 4], 2, 2);
        assert!(masked_loss(&a, &b, &m, LossKind::Pixel, &net).is_err());
        assert!(masked_loss(&b, &b, &m, LossKind::Pixel, &net).is_err());
    }

    proptest::proptest! {
        #[test]
        fn pixel_loss_is_symmetric(
            a in proptest::collection::vec(-1.0f32..1.0, 12),
            b in proptest::collection::vec(-1.0f32..1.0, 12),
            m in proptest::collection::vec(0.0f32..1.0, 4),
        ) {
            let net = PerceptualNet::new(DEFAULT_PERCEPTUAL_SEED).unwrap();
            let ia = Image::new(2, 2, a).unwrap();
            let ib = Image::new(2, 2, b).unwrap();
            let mask = mask_from(&m, 2, 2);
            let l1 = masked_loss(&ia, &ib, &mask, LossKind::Pixel, &net).unwrap();
            let l2 = masked_loss(&ib, &ia, &mask, LossKind::Pixel, &net).unwrap();
            proptest::prop_assert_eq!(l1.to_bits(), l2.to_bits());
        }

        #[test]
        fn cosine_is_scale_invariant(
            u in proptest::collection::vec(-1.0f32..1.0, 8),
            v in proptest::collection::vec(-1.0f32..1.0, 8),
            a in 0.1f32..10.0,
            b in 0.1f32..10.0,
        ) {
            proptest::prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let eu = EmbeddingVector::from_raw(u.clone()).unwrap();
            let ev = EmbeddingVector::from_raw(v.clone()).unwrap();
            let su = EmbeddingVector::from_raw(u.iter().map(|x| x * a).collect()).unwrap();
            let sv = EmbeddingVector::from_raw(v.iter().map(|x| x * b).collect()).unwrap();
            let c1 = cosine_similarity(&eu, &ev).unwrap();
            let c2 = cosine_similarity(&su, &sv).unwrap();
            proptest::prop_assert!((c1 - c2).abs() < 1e-5);
            proptest::prop_assert!((-1.0..=1.0).contains(&c1));
        }
    }
}
