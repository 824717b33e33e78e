use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Square RGB grid, channel-last, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    size: usize,
    pixels: Vec<f64>,
    pub class_id: usize,
}

impl ToyImage {
    /// Builds an image from `size * size * 3` channel-last values, clamping
    /// them into `[0, 1]`.
    pub fn new(size: usize, mut pixels: Vec<f64>, class_id: usize) -> Result<Self> {
        if size == 0 || pixels.len() != size * size * 3 {
            return Err(Error::InvalidArgument(format!(
                "image of side {size} needs {} values, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { op: "image" });
        }
        pixels.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        Ok(Self {
            size,
            pixels,
            class_id,
        })
    }

    pub fn filled(size: usize, rgb: [f64; 3], class_id: usize) -> Self {
        let pixels = rgb.iter().copied().cycle().take(size * size * 3).collect();
        Self::new(size, pixels, class_id).expect("fill is well formed")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.size + x) * 3;
        for (p, v) in self.pixels[i..i + 3].iter_mut().zip(rgb) {
            *p = v.clamp(0.0, 1.0);
        }
    }

    /// Same-size image with every pixel produced by `f(y, x)`.
    pub(crate) fn from_fn(size: usize, class_id: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::filled(size, [0.0; 3], class_id);
        for y in 0..size {
            for x in 0..size {
                img.set(y, x, f(y, x));
            }
        }
        img
    }

    pub(crate) fn map_pixels(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        Self::from_fn(self.size, self.class_id, |y, x| f(self.get(y, x)))
    }
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Shape drawn for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Square,
    Disc,
    Cross,
    DiagonalStripe,
    Ring,
    Checker,
    Triangle,
    Bar,
}

impl Template {
    pub const ALL: [Template; 8] = [
        Template::Square,
        Template::Disc,
        Template::Cross,
        Template::DiagonalStripe,
        Template::Ring,
        Template::Checker,
        Template::Triangle,
        Template::Bar,
    ];

    /// Membership test in units where the image side is 16.
    fn contains(self, dx: f64, dy: f64) -> bool {
        let r2 = dx * dx + dy * dy;
        match self {
            Template::Square => dx.abs() <= 4.0 && dy.abs() <= 4.0,
            Template::Disc => r2 <= 25.0,
            Template::Cross => {
                (dx.abs() <= 1.5 && dy.abs() <= 5.0) || (dy.abs() <= 1.5 && dx.abs() <= 5.0)
            }
            Template::DiagonalStripe => {
                dx.abs() <= 5.0 && dy.abs() <= 5.0 && (dx - dy).abs() <= 1.6
            }
            Template::Ring => (9.0..=25.0).contains(&r2),
            Template::Checker => {
                let inside = dx.abs() <= 5.0 && dy.abs() <= 5.0;
                let cx = ((dx + 5.0) / 2.5).floor() as i64;
                let cy = ((dy + 5.0) / 2.5).floor() as i64;
                inside && (cx + cy) % 2 == 0
            }
            Template::Triangle => (-4.5..=4.5).contains(&dy) && dx.abs() <= (dy + 4.5) / 2.0,
            Template::Bar => dx.abs() <= 5.5 && dy.abs() <= 1.5,
        }
    }
}

pub const NUM_HUES: usize = 12;
/// Distinct (template, hue) combinations reachable by `k -> (k % 8, k % 12)`.
pub const MAX_CLASSES: usize = 24;
/// Background level at the bottom-right corner.
pub const BACKGROUND: f64 = 0.05;
/// Scenes are lit from the top left: the background brightens by these
/// amounts towards the top and left edges, and the foreground is shaded
/// by up to `FOREGROUND_SHADING` towards the bottom.
pub const LIGHT_VERTICAL: f64 = 0.15;
pub const LIGHT_HORIZONTAL: f64 = 0.05;
pub const FOREGROUND_SHADING: f64 = 0.2;
pub const POSITION_JITTER: i64 = 2;
pub const PIXEL_NOISE: f64 = 0.02;

/// Template and foreground colour of class `k`.
pub fn class_appearance(class_id: usize) -> Result<(Template, [f64; 3])> {
    if class_id >= MAX_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "class {class_id} exceeds the {MAX_CLASSES} available template/hue combinations"
        )));
    }
    let template = Template::ALL[class_id % Template::ALL.len()];
    let hue = (class_id % NUM_HUES) as f64 / NUM_HUES as f64;
    Ok((template, hsv_to_rgb([hue, 0.85, 0.9])))
}

/// Draws the class template at integer offset `(jx, jy)` from the centre,
/// without noise, under top-left lighting.
pub fn render(class_id: usize, size: usize, jx: i64, jy: i64) -> Result<ToyImage> {
    let (template, color) = class_appearance(class_id)?;
    let unit = size as f64 / 16.0;
    let centre = (size as f64 - 1.0) / 2.0;
    let (cx, cy) = (centre + jx as f64, centre + jy as f64);
    Ok(ToyImage::from_fn(size, class_id, |y, x| {
        let dx = (x as f64 - cx) / unit;
        let dy = (y as f64 - cy) / unit;
        let up = 1.0 - y as f64 / (size as f64 - 1.0).max(1.0);
        let left = 1.0 - x as f64 / (size as f64 - 1.0).max(1.0);
        if template.contains(dx, dy) {
            color.map(|c| c * (1.0 - FOREGROUND_SHADING * (1.0 - up)))
        } else {
            [BACKGROUND + LIGHT_VERTICAL * up + LIGHT_HORIZONTAL * left; 3]
        }
    }))
}

/// A dataset sample: the template with position jitter and pixel noise.
pub fn render_sample<R: Rng + ?Sized>(class_id: usize, size: usize, rng: &mut R) -> Result<ToyImage> {
    let jx = rng.random_range(-POSITION_JITTER..=POSITION_JITTER);
    let jy = rng.random_range(-POSITION_JITTER..=POSITION_JITTER);
    let mut img = render(class_id, size, jx, jy)?;
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid sigma");
    for p in img.pixels.iter_mut() {
        *p = (*p + noise.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(img)
}
