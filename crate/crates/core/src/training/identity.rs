use candle_core::{DType, Device, Tensor};

use crate::error::Result;
use crate::generator::{layer_swap, synthesize, GeneratorSpec, LatentCode, ParameterVector};
use crate::nn::{get, TensorMap};
use crate::perception::{cosine_similarity, EmbeddingVector, FaceEmbedder};

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn identity_loss_from_embeddings(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    Ok((1.0 - cosine_similarity(u, v)?).clamp(0.0, 2.0))
}

/// Identity loss between the parent's image and the blended child/parent image at `w`.
///
/// `Ok(None)` when the embedder finds no face in either image; callers count these as
/// skipped samples.
pub fn identity_loss(
    w: &LatentCode,
    parent: &ParameterVector,
    child: &ParameterVector,
    embedder: &dyn FaceEmbedder,
    spec: &GeneratorSpec,
) -> Result<Option<f64>> {
    let blended = layer_swap(child, parent, spec)?;
    let xp = synthesize(w, parent, spec)?;
    let xb = synthesize(w, &blended, spec)?;
    let (Some(ep), Some(eb)) = (embedder.embed_face(&xp)?, embedder.embed_face(&xb)?) else {
        return Ok(None);
    };
    identity_loss_from_embeddings(&ep, &eb).map(Some)
}

/// Tensor map of the blended generator: blocks at or below the coarse cut from `child`,
/// all others from `parent`.
pub fn blend_tensor_maps(
    spec: &GeneratorSpec,
    child: &TensorMap,
    parent: &TensorMap,
) -> Result<TensorMap> {
    let mut out = TensorMap::new();
    for info in spec.block_layout() {
        let src = if info.resolution().is_some_and(|r| r <= spec.coarse_cut) {
            child
        } else {
            parent
        };
        out.insert(info.name.clone(), get(src, &info.name)?.clone());
    }
    Ok(out)
}

/// Batched differentiable identity loss. `mask` holds 1 for samples with a detected face.
/// Returns the mean over valid samples (zero when none are valid) and the valid count.
pub fn identity_loss_batch(
    embedder: &dyn FaceEmbedder,
    parent_images: &Tensor,
    blended_images: &Tensor,
    valid: &[bool],
) -> Result<(Tensor, usize)> {
    let n_valid = valid.iter().filter(|v| **v).count();
    let ep = embedder.embed_tensor(&parent_images.detach())?.detach();
    let eb = embedder.embed_tensor(blended_images)?;
    let cos = (ep * eb)?.sum(1)?;
    let per = (cos.neg()? + 1.0)?;
    let m: Vec<f32> = valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    let m = Tensor::from_vec(m, valid.len(), &Device::Cpu)?.to_dtype(per.dtype())?;
    let total = (per * m)?.sum_all()?;
    let loss = (total / (n_valid.max(1) as f64))?;
    Ok((loss, n_valid))
}

pub(crate) fn detect_batch(embedder: &dyn FaceEmbedder, images: &Tensor) -> Result<Vec<bool>> {
    let imgs = crate::image::Image::from_batch_tensor(&images.to_dtype(DType::F32)?)?;
    Ok(imgs.iter().map(|i| embedder.detect(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::FnEmbedder;

    #[test]
    fn child_equal_to_parent_gives_zero() {
        let spec = GeneratorSpec::toy(8);
        let p = ParameterVector::init(&spec, 4);
        let e = FnEmbedder::projection(3 * 64, 16, 1).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let w = LatentCode::sample_z(&spec, &mut rng);
        let l = identity_loss(&w, &p, &p, &e, &spec).unwrap().unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn endpoint_embeddings() {
        let a = EmbeddingVector::from_raw(vec![1.0, 0.0, 0.0]).unwrap();
        let b = EmbeddingVector::from_raw(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(identity_loss_from_embeddings(&a, &a).unwrap(), 0.0);
        assert_eq!(identity_loss_from_embeddings(&a, &b).unwrap(), 1.0);
        assert_eq!(
            identity_loss_from_embeddings(&a, &a.negated()).unwrap(),
            2.0
        );
    }

    #[test]
    fn invalid_samples_do_not_contribute() {
        let e = FnEmbedder::new(3, |x: &Tensor| Ok(x.flatten_from(1)?), |_| true);
        let a = Tensor::new(&[[1f32, 0.0, 0.0], [1.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let b = Tensor::new(&[[1f32, 0.0, 0.0], [-1.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let (l, n) = identity_loss_batch(&e, &a, &b, &[true, false]).unwrap();
        assert_eq!(n, 1);
        assert_eq!(l.to_scalar::<f32>().unwrap(), 0.0);
        let (l, _) = identity_loss_batch(&e, &a, &b, &[true, true]).unwrap();
        assert_eq!(l.to_scalar::<f32>().unwrap(), 1.0);
    }
}
