//! Pixel operations behind each artifact kind. All operate on 8-bit RGB and
//! return an image of the input's dimensions.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, ImageFormat, RgbImage};

use super::rng::MixRng;
use super::DegradeError;

/// Converts a decoded image to 8-bit RGB. Only 8-bit layouts are accepted;
/// alpha is dropped and gray is replicated.
pub fn to_rgb(image: DynamicImage) -> Result<RgbImage, DegradeError> {
    let rgb = match image {
        DynamicImage::ImageRgb8(img) => img,
        img @ (DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_)) => {
            img.to_rgb8()
        }
        other => {
            return Err(DegradeError::UnsupportedLayout(format!("{:?}", other.color())));
        }
    };
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(DegradeError::EmptyImage);
    }
    Ok(rgb)
}

fn check_non_empty(image: &RgbImage) -> Result<(), DegradeError> {
    if image.width() == 0 || image.height() == 0 {
        Err(DegradeError::EmptyImage)
    } else {
        Ok(())
    }
}

fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Half-sample symmetric reflection (`dcba|abcd|dcba`) of index `i` into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian convolution with reflected borders.
pub fn gaussian_blur(image: &RgbImage, sigma: f64) -> Result<RgbImage, DegradeError> {
    check_non_empty(image)?;
    if sigma <= 0.0 {
        return Ok(image.clone());
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let src: Vec<f32> = image.as_raw().iter().map(|&v| f32::from(v)).collect();

    let mut tmp = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f32;
                for (k, wk) in kernel.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - radius, w);
                    acc += wk * src[(y * w + sx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f32;
                for (k, wk) in kernel.iter().enumerate() {
                    let sy = reflect(y as isize + k as isize - radius, h);
                    acc += wk * tmp[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = quantize(acc);
            }
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, out).expect("buffer size matches"))
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma` (in [0, 1]
/// intensity units) to every channel, in row-major, R-G-B order.
pub fn gaussian_noise(image: &RgbImage, sigma: f64, seed: u64) -> Result<RgbImage, DegradeError> {
    check_non_empty(image)?;
    let mut rng = MixRng::new(seed);
    let mut out = image.clone();
    for v in out.iter_mut() {
        let x = f64::from(*v) / 255.0 + sigma * rng.gaussian();
        *v = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    Ok(out)
}

/// Area-average weights mapping `src` samples onto `dst` bins.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let (lo, hi) = (d as f64 * scale, (d + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, (overlap / scale) as f32))
                })
                .collect()
        })
        .collect()
}

/// Box-downscales by `factor`, then bilinearly upsamples back to the
/// original size (pixel-center aligned).
pub fn low_resolution(image: &RgbImage, factor: f64) -> Result<RgbImage, DegradeError> {
    check_non_empty(image)?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let dw = ((w as f64 * factor).round() as usize).clamp(1, w);
    let dh = ((h as f64 * factor).round() as usize).clamp(1, h);
    let src = image.as_raw();

    let xw = box_weights(w, dw);
    let yw = box_weights(h, dh);
    let mut horiz = vec![0f32; dw * h * 3];
    for y in 0..h {
        for (dx, taps) in xw.iter().enumerate() {
            for c in 0..3 {
                horiz[(y * dw + dx) * 3 + c] = taps
                    .iter()
                    .map(|&(sx, wt)| wt * f32::from(src[(y * w + sx) * 3 + c]))
                    .sum();
            }
        }
    }
    let mut small = vec![0f32; dw * dh * 3];
    for (dy, taps) in yw.iter().enumerate() {
        for dx in 0..dw {
            for c in 0..3 {
                small[(dy * dw + dx) * 3 + c] = taps
                    .iter()
                    .map(|&(sy, wt)| wt * horiz[(sy * dw + dx) * 3 + c])
                    .sum();
            }
        }
    }

    let coord = |i: usize, full: usize, reduced: usize| -> (usize, usize, f32) {
        let s = ((i as f64 + 0.5) * reduced as f64 / full as f64 - 0.5).clamp(0.0, (reduced - 1) as f64);
        let s0 = s.floor() as usize;
        (s0, (s0 + 1).min(reduced - 1), (s - s0 as f64) as f32)
    };
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        let (y0, y1, ty) = coord(y, h, dh);
        for x in 0..w {
            let (x0, x1, tx) = coord(x, w, dw);
            for c in 0..3 {
                let at = |yy: usize, xx: usize| small[(yy * dw + xx) * 3 + c];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[(y * w + x) * 3 + c] = quantize(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, out).expect("buffer size matches"))
}

/// JPEG-encodes at `quality` and returns the encoded bytes and their decode.
pub fn jpeg_round_trip(image: &RgbImage, quality: u8) -> Result<(RgbImage, Vec<u8>), DegradeError> {
    check_non_empty(image)?;
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality.clamp(1, 100)).encode_image(image)?;
    let decoded = image::load(Cursor::new(&bytes), ImageFormat::Jpeg)?.to_rgb8();
    Ok((decoded, bytes))
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Scales linear-light intensity by `2^ev` and clamps.
pub fn exposure(image: &RgbImage, ev: f64) -> Result<RgbImage, DegradeError> {
    check_non_empty(image)?;
    let gain = ev.exp2();
    let lut: Vec<u8> = (0..=255u8)
        .map(|v| {
            let lin = (srgb_to_linear(f64::from(v) / 255.0) * gain).clamp(0.0, 1.0);
            (linear_to_srgb(lin) * 255.0).round() as u8
        })
        .collect();
    let mut out = image.clone();
    for v in out.iter_mut() {
        *v = lut[usize::from(*v)];
    }
    Ok(out)
}

/// Mean absolute per-channel difference in [0, 1] units.
pub fn mean_abs_deviation(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let total: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| u64::from(x.abs_diff(y)))
        .sum();
    total as f64 / (a.as_raw().len() as f64 * 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn constant(w: u32, h: u32, v: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(v))
    }

    pub(crate) fn pattern(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let checker = if (x / 4 + y / 4) % 2 == 0 { 60 } else { 0 };
            Rgb([
                (x * 255 / w.max(1)) as u8 / 2 + checker,
                (y * 255 / h.max(1)) as u8 / 2 + checker,
                ((x + y) % 64) as u8 * 2 + 40,
            ])
        })
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = constant(17, 9, [128, 30, 250]);
        for sigma in [0.8, 2.5, 4.0, 10.0] {
            assert_eq!(gaussian_blur(&img, sigma).unwrap(), img);
        }
    }

    #[test]
    fn blur_smooths_edges() {
        let img = pattern(32, 32);
        let out = gaussian_blur(&img, 2.0).unwrap();
        assert_eq!(out.dimensions(), img.dimensions());
        assert!(mean_abs_deviation(&img, &out) > 0.01);
    }

    #[test]
    fn zero_exposure_is_identity() {
        let img = RgbImage::from_fn(256, 1, |x, _| Rgb([x as u8, 255 - x as u8, (x as u8).wrapping_mul(7)]));
        assert_eq!(exposure(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn exposure_direction() {
        let img = constant(4, 4, [100, 100, 100]);
        assert!(exposure(&img, 1.0).unwrap().get_pixel(0, 0)[0] > 100);
        assert!(exposure(&img, -1.0).unwrap().get_pixel(0, 0)[0] < 100);
        assert_eq!(exposure(&constant(2, 2, [250; 3]), 3.0).unwrap().get_pixel(0, 0)[0], 255);
    }

    #[test]
    fn low_res_keeps_size_and_constant() {
        let img = constant(30, 20, [90, 91, 92]);
        for f in [0.1, 0.15, 0.5, 1.0] {
            assert_eq!(low_resolution(&img, f).unwrap(), img);
        }
        let p = pattern(40, 40);
        let out = low_resolution(&p, 0.1).unwrap();
        assert_eq!(out.dimensions(), (40, 40));
        assert!(mean_abs_deviation(&p, &out) > 0.02);
    }

    #[test]
    fn box_weights_partition_unity() {
        for (src, dst) in [(224, 22), (10, 3), (7, 7), (5, 1)] {
            for taps in box_weights(src, dst) {
                let total: f32 = taps.iter().map(|t| t.1).sum();
                assert!((total - 1.0).abs() < 1e-5, "{src}->{dst}: {total}");
            }
        }
    }

    #[test]
    fn jpeg_keeps_size() {
        let p = pattern(33, 17);
        let (out, bytes) = jpeg_round_trip(&p, 10).unwrap();
        assert_eq!(out.dimensions(), p.dimensions());
        assert_eq!(&bytes[..2], &[0xFF, 0xD8]);
    }

    #[test]
    fn noise_is_seeded() {
        let p = pattern(16, 16);
        assert_eq!(gaussian_noise(&p, 0.1, 5).unwrap(), gaussian_noise(&p, 0.1, 5).unwrap());
        assert_ne!(gaussian_noise(&p, 0.1, 5).unwrap(), gaussian_noise(&p, 0.1, 6).unwrap());
        assert_eq!(gaussian_noise(&p, 0.0, 5).unwrap(), p);
    }

    #[test]
    fn unsupported_layout_rejected() {
        let img = DynamicImage::ImageRgb16(image::ImageBuffer::new(2, 2));
        assert!(matches!(to_rgb(img), Err(DegradeError::UnsupportedLayout(_))));
        assert!(matches!(to_rgb(DynamicImage::new_rgb8(0, 0)), Err(DegradeError::EmptyImage)));
        assert!(to_rgb(DynamicImage::new_luma8(2, 2)).is_ok());
    }
}
