use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use super::mask::{ClassMap, FaceClass, MaskWeights, WeightedMask};
use crate::error::{Error, Result};
use crate::image::Image;

/// Produces a face/hair/background class map for an image.
pub trait Segmenter: Send + Sync {
    fn class_map(&self, image: &Image) -> Result<ClassMap>;
}

/// Returns the known generating geometry of synthetic images, looked up by content hash.
#[derive(Debug, Default, Clone)]
pub struct OracleSegmenter {
    maps: HashMap<String, ClassMap>,
}

impl OracleSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, image: &Image, map: ClassMap) {
        self.maps.insert(image.content_hash(), map);
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl Segmenter for OracleSegmenter {
    fn class_map(&self, image: &Image) -> Result<ClassMap> {
        self.maps
            .get(&image.content_hash())
            .cloned()
            .ok_or_else(|| Error::Backend("oracle segmenter has no geometry for this image".into()))
    }
}

/// Labels every pixel with one class.
#[derive(Debug, Clone, Copy)]
pub struct UniformSegmenter(pub FaceClass);

impl Segmenter for UniformSegmenter {
    fn class_map(&self, image: &Image) -> Result<ClassMap> {
        Ok(ClassMap::uniform(image.height(), image.width(), self.0))
    }
}

/// Wraps a segmenter with an on-disk cache of class maps keyed by image content hash.
pub struct CachedSegmenter<S> {
    inner: S,
    dir: PathBuf,
}

impl<S: Segmenter> CachedSegmenter<S> {
    pub fn new(inner: S, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }
}

impl<S: Segmenter> Segmenter for CachedSegmenter<S> {
    fn class_map(&self, image: &Image) -> Result<ClassMap> {
        let path = self.dir.join(format!("{}.mask.json", image.content_hash()));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(map) = serde_json::from_slice::<ClassMap>(&bytes) {
                return Ok(map);
            }
        }
        let map = self.inner.class_map(image)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&map)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(map)
    }
}

/// Segmenters looked up by configured backend name.
#[derive(Default, Clone)]
pub struct SegmenterRegistry {
    backends: HashMap<String, Arc<dyn Segmenter>>,
}

impl SegmenterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, backend: Arc<dyn Segmenter>) {
        self.backends.insert(name.to_string(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Segmenter>> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("no segmenter registered as `{name}`")))
    }
}

/// Segment `image` and weight each pixel by its class.
pub fn segment_to_mask(
    image: &Image,
    segmenter: &dyn Segmenter,
    triple: MaskWeights,
) -> Result<WeightedMask> {
    let map = segmenter.class_map(image)?;
    if map.height != image.height() || map.width != image.width() {
        return Err(Error::Backend(
            "segmenter returned a map of the wrong size".into(),
        ));
    }
    WeightedMask::from_class_map(map, triple)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_face_is_uniform_one() {
        let img = Image::filled(4, 4, [0.0; 3]);
        let m = segment_to_mask(
            &img,
            &UniformSegmenter(FaceClass::Face),
            MaskWeights::default(),
        )
        .unwrap();
        assert!(m.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn zero_triple_is_zero_mask() {
        let img = Image::filled(4, 4, [0.0; 3]);
        let zero = MaskWeights {
            face: 0.0,
            hair: 0.0,
            background: 0.0,
        };
        let m = segment_to_mask(&img, &UniformSegmenter(FaceClass::Face), zero).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn unknown_backend_and_unknown_image_are_errors() {
        let reg = SegmenterRegistry::new();
        assert!(matches!(reg.get("deeplab"), Err(Error::Backend(_))));
        let oracle = OracleSegmenter::new();
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(matches!(
            segment_to_mask(&img, &oracle, MaskWeights::default()),
            Err(Error::Backend(_))
        ));
    }

    #[test]
    fn cache_returns_same_map() {
        let dir = tempfile::tempdir().unwrap();
        let mut oracle = OracleSegmenter::new();
        let img = Image::filled(2, 2, [0.1; 3]);
        let map = ClassMap {
            height: 2,
            width: 2,
            classes: vec![
                FaceClass::Face,
                FaceClass::Hair,
                FaceClass::Background,
                FaceClass::Face,
            ],
        };
        oracle.register(&img, map.clone());
        let cached = CachedSegmenter::new(oracle, dir.path()).unwrap();
        assert_eq!(cached.class_map(&img).unwrap(), map);
        assert_eq!(cached.class_map(&img).unwrap(), map);
    }
}
