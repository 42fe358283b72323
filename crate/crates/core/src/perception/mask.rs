use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Per-pixel semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceClass {
    Face,
    Hair,
    Background,
}

impl FaceClass {
    pub fn code(self) -> u8 {
        match self {
            FaceClass::Background => 0,
            FaceClass::Face => 1,
            FaceClass::Hair => 2,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            1 => FaceClass::Face,
            2 => FaceClass::Hair,
            // Every other parsing class collapses into background.
            _ => FaceClass::Background,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<FaceClass>,
}

impl ClassMap {
    pub fn uniform(height: usize, width: usize, class: FaceClass) -> Self {
        Self {
            height,
            width,
            classes: vec![class; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> FaceClass {
        self.classes[y * self.width + x]
    }

    pub fn count(&self, class: FaceClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }
}

/// Loss weights per class; the default puts full weight on the face, a little on hair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskWeights {
    pub face: f32,
    pub hair: f32,
    pub background: f32,
}

impl Default for MaskWeights {
    fn default() -> Self {
        Self {
            face: 1.0,
            hair: 0.1,
            background: 0.0,
        }
    }
}

impl MaskWeights {
    pub fn validate(&self) -> Result<()> {
        for v in [self.face, self.hair, self.background] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "mask weight {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn weight(&self, class: FaceClass) -> f32 {
        match class {
            FaceClass::Face => self.face,
            FaceClass::Hair => self.hair,
            FaceClass::Background => self.background,
        }
    }
}

/// Per-pixel loss weights derived from a class map.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMask {
    pub class_map: ClassMap,
    pub weights: Vec<f32>,
}

impl WeightedMask {
    pub fn from_class_map(class_map: ClassMap, triple: MaskWeights) -> Result<Self> {
        triple.validate()?;
        let weights = class_map
            .classes
            .iter()
            .map(|c| triple.weight(*c))
            .collect();
        Ok(Self { class_map, weights })
    }

    /// A mask with arbitrary non-negative weights (used by scaling checks).
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            class_map: self.class_map.clone(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.class_map.height
    }

    pub fn width(&self) -> usize {
        self.class_map.width
    }

    pub fn check_matches(&self, img: &Image) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::InvalidInput(format!(
                "mask {}x{} does not match image {}x{}",
                self.height(),
                self.width(),
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(
        &self,
        device: &candle_core::Device,
        dtype: candle_core::DType,
    ) -> Result<candle_core::Tensor> {
        let t = candle_core::Tensor::from_slice(
            &self.weights,
            (1, 1, self.height(), self.width()),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }
}
