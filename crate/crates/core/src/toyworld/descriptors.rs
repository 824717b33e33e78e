//! Global colour, contrast, texture and shape statistics of an image.

use super::image::ToyImage;

pub const NUM_DESCRIPTORS: usize = 18;

fn luminance([r, g, b]: [f64; 3]) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Fixed, hand-designed statistics: channel means, luminance mean and
/// spread, chroma mean and spread, gradient and Laplacian energy, gradient
/// anisotropy, second moments of the foreground mass, dark/foreground
/// area fractions, and top-bottom / left-right luminance differences.
pub fn image_descriptors(img: &ToyImage) -> [f64; NUM_DESCRIPTORS] {
    let n = img.size();
    let count = (n * n) as f64;
    let lum: Vec<f64> = (0..n * n).map(|i| luminance(img.get(i / n, i % n))).collect();
    let at = |y: usize, x: usize| lum[y * n + x];

    let mut rgb = [0.0; 3];
    let mut chroma = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let p = img.get(y, x);
            rgb.iter_mut().zip(p).for_each(|(s, v)| *s += v / count);
            let hi = p.iter().cloned().fold(f64::MIN, f64::max);
            let lo = p.iter().cloned().fold(f64::MAX, f64::min);
            chroma.push(hi - lo);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let spread = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };

    let (mut dx, mut dy, mut aniso, mut shear, mut lap) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let interior = ((n - 2) * (n - 2)).max(1) as f64;
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let gx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            let gy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            dx += gx.abs() / interior;
            dy += gy.abs() / interior;
            aniso += (gx * gx - gy * gy) / interior;
            shear += gx * gy / interior;
            lap += (at(y, x + 1) + at(y, x - 1) + at(y + 1, x) + at(y - 1, x) - 4.0 * at(y, x)).abs() / interior;
        }
    }

    // foreground mass = chroma; its second central moments in unit coordinates
    let mass: f64 = chroma.iter().sum::<f64>().max(1e-9);
    let coord = |i: usize| (i as f64 + 0.5) / n as f64 - 0.5;
    let (mut cy, mut cx) = (0.0, 0.0);
    for (i, w) in chroma.iter().enumerate() {
        cy += w * coord(i / n) / mass;
        cx += w * coord(i % n) / mass;
    }
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for (i, w) in chroma.iter().enumerate() {
        let (oy, ox) = (coord(i / n) - cy, coord(i % n) - cx);
        mu20 += w * ox * ox / mass;
        mu02 += w * oy * oy / mass;
        mu11 += w * ox * oy / mass;
    }

    let dark = lum.iter().filter(|&&l| l < 0.05).count() as f64 / count;
    let foreground = chroma.iter().filter(|&&c| c > 0.3).count() as f64 / count;
    let (mut vertical, mut horizontal) = (0.0, 0.0);
    for (i, l) in lum.iter().enumerate() {
        vertical -= l * coord(i / n).signum() / count;
        horizontal -= l * coord(i % n).signum() / count;
    }
    [
        rgb[0],
        rgb[1],
        rgb[2],
        mean(&lum),
        spread(&lum),
        mean(&chroma),
        spread(&chroma),
        dx,
        dy,
        lap,
        aniso,
        shear,
        mu20 - mu02,
        mu11,
        dark,
        foreground,
        vertical,
        horizontal,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{apply_augmentation, render, AugmentationType};

    #[test]
    fn flat_image_has_no_texture() {
        let img = ToyImage::filled(8, [0.2, 0.4, 0.6], 0);
        let d = image_descriptors(&img);
        assert!((d[0] - 0.2).abs() < 1e-12 && (d[2] - 0.6).abs() < 1e-12);
        assert!(d[4].abs() < 1e-12);
        for v in &d[6..14] {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(d[15], 1.0);
    }

    #[test]
    fn rotation_swaps_anisotropy_sign() {
        // the diagonal-stripe template is not rotation symmetric
        let img = render(3, 16, 0, 0).unwrap();
        let rot = apply_augmentation(&img, AugmentationType::Rot90, 0);
        let (a, b) = (image_descriptors(&img), image_descriptors(&rot));
        assert!((a[10] + b[10]).abs() < 1e-9);
        assert!((a[12] + b[12]).abs() < 1e-9);
    }

    #[test]
    fn grayscale_removes_chroma() {
        let img = render(1, 16, 0, 0).unwrap();
        let gray = apply_augmentation(&img, AugmentationType::Grayscale, 0);
        let d = image_descriptors(&gray);
        assert!(d[5].abs() < 1e-12);
        assert_eq!(d[15], 0.0);
    }
}
