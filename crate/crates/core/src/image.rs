//! RGB images in channel-major layout with values in `[-1, 1]`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A three-channel image stored as `[3, height, width]` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::InvalidInput(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                Self::CHANNELS * height * width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat(c).take(height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, 3, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stack images into a `[B, 3, H, W]` tensor.
    pub fn batch_tensor(images: &[Image], device: &Device, dtype: DType) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if !img.same_shape(first) {
                return Err(Error::InvalidInput("image batch with mixed sizes".into()));
            }
            data.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(data, (images.len(), 3, first.height, first.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Split a `[B, 3, H, W]` tensor into images.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Image>> {
        let (b, c, h, w) = t.dims4()?;
        if c != 3 {
            return Err(Error::InvalidInput(format!("expected 3 channels, got {c}")));
        }
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(flat
            .chunks_exact(3 * h * w)
            .take(b)
            .map(|chunk| Image {
                height: h,
                width: w,
                data: chunk.to_vec(),
            })
            .collect())
    }

    /// Center crop keeping `ratio` of each side (rounded, at least one pixel).
    pub fn center_crop(&self, ratio: f64) -> Image {
        let ch = ((self.height as f64 * ratio).round() as usize).clamp(1, self.height);
        let cw = ((self.width as f64 * ratio).round() as usize).clamp(1, self.width);
        let y0 = (self.height - ch) / 2;
        let x0 = (self.width - cw) / 2;
        let mut out = Image::filled(ch, cw, [0.0; 3]);
        for c in 0..3 {
            for y in 0..ch {
                for x in 0..cw {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::filled(height, width, [0.0; 3]);
        for c in 0..3 {
            for y in 0..height {
                let sy = y * self.height / height;
                for x in 0..width {
                    let sx = x * self.width / width;
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        out
    }

    /// SHA-256 over dimensions and little-endian pixel bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn mse(&self, other: &Image) -> Result<f32> {
        if !self.same_shape(other) {
            return Err(Error::InvalidInput("image size mismatch".into()));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok((sum / self.data.len() as f64) as f32)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = [0, 1, 2].map(|c| {
                    let v = (self.get(c, y, x).clamp(-1.0, 1.0) + 1.0) * 127.5;
                    v.round() as u8
                });
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(h, w, [0.0; 3]);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px.0[c] as f32 / 127.5 - 1.0);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}
