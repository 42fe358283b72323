//! Synthetic portrait corpus with per-decade style cues and exact geometry.
//!
//! Each identity is a fixed set of face, hair, eye and mouth parameters. A
//! decade only changes the photographic style (palette and frame), so identity
//! and era are independent by construction. Class maps come from the same
//! predicates that paint the pixels, so the oracle segmenter is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decade::Decade;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::perception::{ClassMap, FaceClass, OracleSegmenter};
use crate::training::DecadeDataset;

/// Decades the toy world knows how to render.
pub const TOY_DECADES: [u16; 3] = [1900, 1910, 1920];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyStyle {
    /// Warm sepia palette with a dark frame.
    Sepia,
    /// Low-contrast grayscale with no frame.
    Gray,
    /// Saturated color with a pale frame.
    Saturated,
}

impl ToyStyle {
    pub fn for_decade(decade: Decade) -> Result<Self> {
        match decade.year() {
            1900 => Ok(ToyStyle::Sepia),
            1910 => Ok(ToyStyle::Gray),
            1920 => Ok(ToyStyle::Saturated),
            y => Err(Error::UnknownDecade(y)),
        }
    }

    fn apply(self, rgb: [f32; 3]) -> [f32; 3] {
        let lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
        match self {
            ToyStyle::Sepia => [lum * 0.9 + 0.1, lum * 0.72 + 0.06, lum * 0.45 + 0.03],
            ToyStyle::Gray => {
                let g = 0.2 + 0.6 * lum;
                [g, g, g]
            }
            ToyStyle::Saturated => rgb.map(|c| (lum + 1.8 * (c - lum)).clamp(0.0, 1.0)),
        }
    }

    fn frame(self) -> Option<[f32; 3]> {
        match self {
            ToyStyle::Sepia => Some([0.22, 0.13, 0.06]),
            ToyStyle::Gray => None,
            ToyStyle::Saturated => Some([0.95, 0.95, 0.9]),
        }
    }
}

/// Geometry and tones of one synthetic person, in unit image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyIdentity {
    pub face_center: (f32, f32),
    pub face_radii: (f32, f32),
    pub hair_scale: (f32, f32),
    pub hair_lift: f32,
    pub hair_length: f32,
    pub eye_spacing: f32,
    pub eye_height: f32,
    pub mouth_width: f32,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
}

impl ToyIdentity {
    fn sample(rng: &mut impl Rng) -> Self {
        let skin_l: f32 = rng.gen_range(0.35..0.9);
        let hair_l: f32 = rng.gen_range(0.05..0.95);
        let hair_warm: f32 = rng.gen_range(0.0..0.25);
        Self {
            face_center: (rng.gen_range(0.44..0.56), rng.gen_range(0.52..0.6)),
            face_radii: (rng.gen_range(0.17..0.27), rng.gen_range(0.22..0.32)),
            hair_scale: (rng.gen_range(1.15..1.45), rng.gen_range(1.05..1.3)),
            hair_lift: rng.gen_range(0.1..0.45),
            hair_length: rng.gen_range(-0.3..0.9),
            eye_spacing: rng.gen_range(0.3..0.6),
            eye_height: rng.gen_range(0.1..0.35),
            mouth_width: rng.gen_range(0.25..0.65),
            skin: [skin_l, skin_l * 0.82, skin_l * 0.7],
            hair: [
                hair_l + hair_warm * 0.5,
                hair_l,
                (hair_l - hair_warm).max(0.0),
            ],
        }
    }

    fn in_face(&self, u: f32, v: f32) -> bool {
        let dx = (u - self.face_center.0) / self.face_radii.0;
        let dy = (v - self.face_center.1) / self.face_radii.1;
        dx * dx + dy * dy <= 1.0
    }

    fn in_hair(&self, u: f32, v: f32) -> bool {
        let (cx, cy) = self.face_center;
        let (rx, ry) = self.face_radii;
        let hy = cy - self.hair_lift * ry;
        let dx = (u - cx) / (rx * self.hair_scale.0);
        let dy = (v - hy) / (ry * self.hair_scale.1);
        dx * dx + dy * dy <= 1.0 && v <= cy + self.hair_length * ry
    }

    fn feature_color(&self, u: f32, v: f32, res: usize) -> Option<[f32; 3]> {
        let (cx, cy) = self.face_center;
        let (rx, ry) = self.face_radii;
        let px = 1.0 / res as f32;
        let ey = cy - self.eye_height * ry;
        let ex = self.eye_spacing * rx;
        let eye_r = (0.08 * rx).max(0.55 * px);
        for sx in [-1.0, 1.0] {
            let dx = u - (cx + sx * ex);
            let dy = v - ey;
            if dx * dx + dy * dy <= eye_r * eye_r {
                return Some([0.05, 0.05, 0.08]);
            }
        }
        let my = cy + 0.5 * ry;
        if (u - cx).abs() <= self.mouth_width * rx * 0.5
            && (v - my).abs() <= (0.06 * ry).max(0.5 * px)
        {
            return Some([0.65, 0.15, 0.15]);
        }
        None
    }
}

/// One rendered portrait with its exact class map.
#[derive(Debug, Clone)]
pub struct ToySample {
    pub image: Image,
    pub class_map: ClassMap,
    pub identity: usize,
    pub decade: Decade,
}

/// Deterministic generator of toy portraits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyWorld {
    pub resolution: usize,
    pub seed: u64,
}

impl ToyWorld {
    pub fn new(resolution: usize, seed: u64) -> Result<Self> {
        if resolution < 8 || !resolution.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "toy resolution {resolution} must be a power of two >= 8"
            )));
        }
        Ok(Self { resolution, seed })
    }

    pub fn decades() -> Vec<Decade> {
        TOY_DECADES
            .iter()
            .map(|y| Decade::new(*y).expect("valid"))
            .collect()
    }

    pub fn identity(&self, id: usize) -> ToyIdentity {
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        ToyIdentity::sample(&mut rng)
    }

    /// Render identity `id` in `decade`. `variant` selects the background tone.
    pub fn render(&self, id: usize, decade: Decade, variant: u64) -> Result<ToySample> {
        let style = ToyStyle::for_decade(decade)?;
        let who = self.identity(id);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed.wrapping_add(0x5bd1_e995) ^ (id as u64) << 20 ^ variant,
        );
        let bg: [f32; 3] = [
            rng.gen_range(0.2..0.85),
            rng.gen_range(0.2..0.85),
            rng.gen_range(0.2..0.85),
        ];
        let res = self.resolution;
        let border = res.div_ceil(16);
        let mut data = vec![0.0f32; 3 * res * res];
        let mut classes = Vec::with_capacity(res * res);
        for y in 0..res {
            for x in 0..res {
                let u = (x as f32 + 0.5) / res as f32;
                let v = (y as f32 + 0.5) / res as f32;
                let (class, base) = if who.in_face(u, v) {
                    (
                        FaceClass::Face,
                        who.feature_color(u, v, res).unwrap_or(who.skin),
                    )
                } else if who.in_hair(u, v) {
                    (FaceClass::Hair, who.hair)
                } else {
                    (FaceClass::Background, bg)
                };
                let framed = x < border || y < border || x >= res - border || y >= res - border;
                let rgb = match (framed, style.frame()) {
                    (true, Some(f)) => f,
                    _ => style.apply(base),
                };
                classes.push(class);
                for c in 0..3 {
                    data[c * res * res + y * res + x] = rgb[c] * 2.0 - 1.0;
                }
            }
        }
        Ok(ToySample {
            image: Image::new(res, res, data)?,
            class_map: ClassMap {
                height: res,
                width: res,
                classes,
            },
            identity: id,
            decade,
        })
    }

    /// Samples for identities `ids` in one decade.
    pub fn samples(
        &self,
        decade: Decade,
        ids: impl IntoIterator<Item = usize>,
    ) -> Result<Vec<ToySample>> {
        ids.into_iter()
            .map(|id| self.render(id, decade, 0))
            .collect()
    }

    pub fn dataset(
        &self,
        decade: Decade,
        ids: impl IntoIterator<Item = usize>,
    ) -> Result<DecadeDataset> {
        let samples = self.samples(decade, ids)?;
        DecadeDataset::new(decade, samples.into_iter().map(|s| s.image).collect())
    }

    /// Identity-labelled images rendered in every toy decade with several
    /// backgrounds, for training a style-invariant embedder.
    pub fn identity_corpus(
        &self,
        ids: impl IntoIterator<Item = usize>,
        variants: u64,
    ) -> Result<Vec<(Image, usize)>> {
        let mut out = Vec::new();
        for (label, id) in ids.into_iter().enumerate() {
            for d in Self::decades() {
                for v in 0..variants {
                    out.push((self.render(id, d, v + 1)?.image, label));
                }
            }
        }
        Ok(out)
    }
}

/// Oracle segmenter that knows the geometry of every sample given.
pub fn oracle_for<'a>(samples: impl IntoIterator<Item = &'a ToySample>) -> OracleSegmenter {
    let mut seg = OracleSegmenter::new();
    for s in samples {
        seg.register(&s.image, s.class_map.clone());
    }
    seg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{segment_to_mask, MaskWeights};

    fn d(y: u16) -> Decade {
        Decade::new(y).unwrap()
    }

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let w = ToyWorld::new(16, 3).unwrap();
        let a = w.render(4, d(1900), 0).unwrap();
        let b = w.render(4, d(1900), 0).unwrap();
        assert_eq!(a.image, b.image);
        assert!(a.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(a.class_map.count(FaceClass::Face) > 0);
        assert!(a.class_map.count(FaceClass::Background) > 0);
    }

    #[test]
    fn decade_changes_style_not_geometry() {
        let w = ToyWorld::new(16, 3).unwrap();
        let a = w.render(2, d(1900), 0).unwrap();
        let b = w.render(2, d(1920), 0).unwrap();
        assert_eq!(a.class_map, b.class_map);
        assert_ne!(a.image, b.image);
    }

    #[test]
    fn unknown_decade_is_rejected() {
        let w = ToyWorld::new(16, 3).unwrap();
        assert!(matches!(
            w.render(0, d(1950), 0),
            Err(Error::UnknownDecade(1950))
        ));
    }

    #[test]
    fn oracle_mask_matches_face_disk() {
        let w = ToyWorld::new(32, 9).unwrap();
        let s = w.render(1, d(1910), 0).unwrap();
        let who = w.identity(1);
        let seg = oracle_for([&s]);
        let m = segment_to_mask(&s.image, &seg, MaskWeights::default()).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let u = (x as f32 + 0.5) / 32.0;
                let v = (y as f32 + 0.5) / 32.0;
                let dx = (u - who.face_center.0) / who.face_radii.0;
                let dy = (v - who.face_center.1) / who.face_radii.1;
                let inside = dx * dx + dy * dy <= 1.0;
                assert_eq!(m.class_map.get(y, x) == FaceClass::Face, inside);
                if inside {
                    assert_eq!(m.weights[y * 32 + x], 1.0);
                }
            }
        }
    }
}
