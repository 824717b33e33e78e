//! The fourteen view transforms.
//!
//! Each member has one fixed parameterisation. Only `CropResize`,
//! `GaussianNoise` and `Cutout` consume randomness; they are deterministic
//! given the seed passed to [`apply_augmentation`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{hsv_to_rgb, rgb_to_hsv, ToyImage};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AugmentationType {
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
    CropResize,
    Brightness,
    Contrast,
    Saturation,
    Hue,
    Grayscale,
    GaussianBlur,
    GaussianNoise,
    Cutout,
}

pub const NUM_AUGMENTATIONS: usize = 14;

pub const BRIGHTNESS_FACTOR: f64 = 1.35;
pub const CONTRAST_FACTOR: f64 = 1.5;
pub const SATURATION_FACTOR: f64 = 1.5;
pub const HUE_SHIFT: f64 = 0.25;
pub const BLUR_SIGMA: f64 = 1.0;
pub const NOISE_SIGMA: f64 = 0.1;

impl AugmentationType {
    pub const ALL: [AugmentationType; NUM_AUGMENTATIONS] = [
        AugmentationType::HFlip,
        AugmentationType::VFlip,
        AugmentationType::Rot90,
        AugmentationType::Rot180,
        AugmentationType::Rot270,
        AugmentationType::CropResize,
        AugmentationType::Brightness,
        AugmentationType::Contrast,
        AugmentationType::Saturation,
        AugmentationType::Hue,
        AugmentationType::Grayscale,
        AugmentationType::GaussianBlur,
        AugmentationType::GaussianNoise,
        AugmentationType::Cutout,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AugmentationType::HFlip => "hflip",
            AugmentationType::VFlip => "vflip",
            AugmentationType::Rot90 => "rot90",
            AugmentationType::Rot180 => "rot180",
            AugmentationType::Rot270 => "rot270",
            AugmentationType::CropResize => "crop_resize",
            AugmentationType::Brightness => "brightness",
            AugmentationType::Contrast => "contrast",
            AugmentationType::Saturation => "saturation",
            AugmentationType::Hue => "hue",
            AugmentationType::Grayscale => "grayscale",
            AugmentationType::GaussianBlur => "gaussian_blur",
            AugmentationType::GaussianNoise => "gaussian_noise",
            AugmentationType::Cutout => "cutout",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            AugmentationType::CropResize | AugmentationType::GaussianNoise | AugmentationType::Cutout
        )
    }
}

impl fmt::Display for AugmentationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation '{s}'")))
    }
}

impl TryFrom<String> for AugmentationType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AugmentationType> for String {
    fn from(a: AugmentationType) -> Self {
        a.name().to_string()
    }
}

fn luminance([r, g, b]: [f64; 3]) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rotate90(img: &ToyImage) -> ToyImage {
    let n = img.size();
    ToyImage::from_fn(n, img.class_id, |y, x| img.get(x, n - 1 - y))
}

fn crop_resize<R: Rng>(img: &ToyImage, rng: &mut R) -> ToyImage {
    let n = img.size();
    let side = rng.random_range(n.div_ceil(2)..=(3 * n / 4).max(n.div_ceil(2)));
    let oy = rng.random_range(0..=n - side);
    let ox = rng.random_range(0..=n - side);
    let scale = if n > 1 { (side - 1) as f64 / (n - 1) as f64 } else { 0.0 };
    ToyImage::from_fn(n, img.class_id, |y, x| {
        let sy = oy as f64 + y as f64 * scale;
        let sx = ox as f64 + x as f64 * scale;
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let (a, b, c, d) = (img.get(y0, x0), img.get(y0, x1), img.get(y1, x0), img.get(y1, x1));
        std::array::from_fn(|k| {
            (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k])
        })
    })
}

fn blur(img: &ToyImage) -> ToyImage {
    let n = img.size() as i64;
    let w: Vec<f64> = (-1..=1).map(|d: i64| (-(d * d) as f64 / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp()).collect();
    let z: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / z).collect();
    let clamp = |v: i64| v.clamp(0, n - 1) as usize;
    let horizontal = ToyImage::from_fn(img.size(), img.class_id, |y, x| {
        let mut acc = [0.0; 3];
        for (k, d) in (-1..=1).enumerate() {
            let p = img.get(y, clamp(x as i64 + d));
            (0..3).for_each(|c| acc[c] += w[k] * p[c]);
        }
        acc
    });
    ToyImage::from_fn(img.size(), img.class_id, |y, x| {
        let mut acc = [0.0; 3];
        for (k, d) in (-1..=1).enumerate() {
            let p = horizontal.get(clamp(y as i64 + d), x);
            (0..3).for_each(|c| acc[c] += w[k] * p[c]);
        }
        acc
    })
}

/// Applies `aug` to `img`. Class id and shape are preserved and the output
/// is clamped to `[0, 1]`.
pub fn apply_augmentation(img: &ToyImage, aug: AugmentationType, seed: u64) -> ToyImage {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = img.size();
    match aug {
        AugmentationType::HFlip => ToyImage::from_fn(n, img.class_id, |y, x| img.get(y, n - 1 - x)),
        AugmentationType::VFlip => ToyImage::from_fn(n, img.class_id, |y, x| img.get(n - 1 - y, x)),
        AugmentationType::Rot90 => rotate90(img),
        AugmentationType::Rot180 => {
            ToyImage::from_fn(n, img.class_id, |y, x| img.get(n - 1 - y, n - 1 - x))
        }
        AugmentationType::Rot270 => ToyImage::from_fn(n, img.class_id, |y, x| img.get(n - 1 - x, y)),
        AugmentationType::CropResize => crop_resize(img, &mut rng),
        AugmentationType::Brightness => img.map_pixels(|p| p.map(|v| v * BRIGHTNESS_FACTOR)),
        AugmentationType::Contrast => {
            let mean = img.pixels().iter().sum::<f64>() / img.pixels().len() as f64;
            img.map_pixels(|p| p.map(|v| mean + CONTRAST_FACTOR * (v - mean)))
        }
        AugmentationType::Saturation => img.map_pixels(|p| {
            let [h, s, v] = rgb_to_hsv(p);
            hsv_to_rgb([h, (s * SATURATION_FACTOR).min(1.0), v])
        }),
        AugmentationType::Hue => img.map_pixels(|p| {
            let [h, s, v] = rgb_to_hsv(p);
            hsv_to_rgb([(h + HUE_SHIFT).rem_euclid(1.0), s, v])
        }),
        AugmentationType::Grayscale => img.map_pixels(|p| [luminance(p); 3]),
        AugmentationType::GaussianBlur => blur(img),
        AugmentationType::GaussianNoise => {
            let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
            img.map_pixels(|p| p.map(|v| v + noise.sample(&mut rng)))
        }
        AugmentationType::Cutout => {
            let side = (n / 4).max(1);
            let oy = rng.random_range(0..=n - side);
            let ox = rng.random_range(0..=n - side);
            ToyImage::from_fn(n, img.class_id, |y, x| {
                if (oy..oy + side).contains(&y) && (ox..ox + side).contains(&x) {
                    [0.0; 3]
                } else {
                    img.get(y, x)
                }
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::image::{render, render_sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ToyImage {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        render_sample(6, 16, &mut rng).unwrap()
    }

    #[test]
    fn exactly_fourteen_members() {
        assert_eq!(AugmentationType::ALL.len(), 14);
        for (i, a) in AugmentationType::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(a.name().parse::<AugmentationType>().unwrap(), *a);
        }
    }

    #[test]
    fn flips_are_involutions() {
        let img = sample();
        for aug in [AugmentationType::HFlip, AugmentationType::VFlip, AugmentationType::Rot180] {
            let twice = apply_augmentation(&apply_augmentation(&img, aug, 0), aug, 0);
            assert_eq!(twice, img, "{aug}");
        }
    }

    #[test]
    fn rot90_has_order_four() {
        let img = sample();
        let mut out = img.clone();
        for _ in 0..4 {
            out = apply_augmentation(&out, AugmentationType::Rot90, 0);
        }
        assert_eq!(out, img);
        let r270 = apply_augmentation(&img, AugmentationType::Rot270, 0);
        let r90x3 = (0..3).fold(img.clone(), |acc, _| apply_augmentation(&acc, AugmentationType::Rot90, 0));
        assert_eq!(r270, r90x3);
    }

    #[test]
    fn grayscale_is_luminance() {
        let img = sample();
        let gray = apply_augmentation(&img, AugmentationType::Grayscale, 0);
        for y in 0..16 {
            for x in 0..16 {
                let [r, g, b] = img.get(y, x);
                let expected = 0.299 * r + 0.587 * g + 0.114 * b;
                let out = gray.get(y, x);
                assert_eq!(out[0], out[1]);
                assert_eq!(out[1], out[2]);
                assert!((out[0] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_range_and_class_preserved() {
        let img = sample();
        for aug in AugmentationType::ALL {
            for seed in 0..5 {
                let out = apply_augmentation(&img, aug, seed);
                assert_eq!(out.size(), 16);
                assert_eq!(out.class_id, img.class_id);
                assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)), "{aug}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let img = sample();
        for aug in AugmentationType::ALL {
            assert_eq!(apply_augmentation(&img, aug, 42), apply_augmentation(&img, aug, 42));
            if !aug.is_stochastic() {
                assert_eq!(apply_augmentation(&img, aug, 1), apply_augmentation(&img, aug, 2));
            }
        }
        let differs = |aug| apply_augmentation(&img, aug, 1) != apply_augmentation(&img, aug, 2);
        assert!(differs(AugmentationType::GaussianNoise));
        assert!((0..8).any(|s| apply_augmentation(&img, AugmentationType::Cutout, s)
            != apply_augmentation(&img, AugmentationType::Cutout, s + 100)));
    }

    #[test]
    fn every_member_changes_an_asymmetric_image() {
        // triangle, off-centre: no transform should be the identity on it
        let img = render(6, 16, 1, -1).unwrap();
        for aug in AugmentationType::ALL {
            assert_ne!(apply_augmentation(&img, aug, 3), img, "{aug}");
        }
    }
}
