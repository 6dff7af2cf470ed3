use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Model input side length.
pub const IMAGE_SIZE: usize = 128;

/// Channel-major image, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::shape("image", format!("{} values for {channels}×{height}×{width}", data.len())));
        }
        Ok(ImageTensor { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ImageTensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    /// Loads PNG/PGM as gray (1 channel) or RGB (3 channels), scaled to [0, 1].
    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().channel_count() >= 3 {
            let rgb = img.to_rgb8();
            let mut data = vec![0.0; 3 * w * h];
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = px[c] as f64 / 255.0;
                }
            }
            Self::new(3, h, w, data)
        } else {
            let g = img.to_luma8();
            Self::new(1, h, w, g.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
    }

    /// Quantises to 8 bits (values clamped to [0, 1]), interleaved.
    pub fn to_bytes(&self) -> Vec<u8> {
        let hw = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..hw {
            for c in 0..self.channels {
                out.push((self.data[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
        };
        image::save_buffer(path, &self.to_bytes(), self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

/// Catmull-Rom cubic kernel (a = −0.5).
fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and weights for resampling `n_in` samples to `n_out`, pixel centres
/// aligned, edges clamped.
fn taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut t = [(0, 0.0); 4];
            for (k, slot) in t.iter_mut().enumerate() {
                let off = k as isize - 1;
                let i = (base as isize + off).clamp(0, n_in as isize - 1) as usize;
                *slot = (i, cubic(frac - off as f64));
            }
            t
        })
        .collect()
}

/// Separable bicubic resize of every channel.
pub fn resize_bicubic(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (tx, ty) = (taps(img.width, out_w), taps(img.height, out_h));
    let mut out = ImageTensor::zeros(img.channels, out_h, out_w);
    let mut rows = vec![0.0; img.height * out_w];
    for c in 0..img.channels {
        let p = img.plane(c);
        for y in 0..img.height {
            for (x, t) in tx.iter().enumerate() {
                rows[y * out_w + x] = t.iter().map(|&(i, w)| w * p[y * img.width + i]).sum();
            }
        }
        for (y, t) in ty.iter().enumerate() {
            for x in 0..out_w {
                out.data[(c * out_h + y) * out_w + x] = t.iter().map(|&(i, w)| w * rows[i * out_w + x]).sum();
            }
        }
    }
    out
}

fn min_max_in_place(data: &mut [f64]) {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let span = hi - lo;
        data.iter_mut().for_each(|v| *v = (*v - lo) / span);
    } else {
        data.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Centre-crops to the largest square, min-max normalises, resizes to
/// 128×128 with Catmull-Rom bicubic, clamps to [0, 1] and min-max
/// normalises once more so the output spans exactly [0, 1].
pub fn preprocess_image(raw: &ImageTensor) -> Result<ImageTensor> {
    if raw.height < IMAGE_SIZE || raw.width < IMAGE_SIZE {
        return Err(Error::Image(format!("image is {}×{}, need at least {IMAGE_SIZE}×{IMAGE_SIZE}", raw.width, raw.height)));
    }
    let side = raw.height.min(raw.width);
    let (y0, x0) = ((raw.height - side) / 2, (raw.width - side) / 2);
    let mut crop = ImageTensor::zeros(raw.channels, side, side);
    for c in 0..raw.channels {
        for y in 0..side {
            for x in 0..side {
                crop.data[(c * side + y) * side + x] = raw.at(c, y + y0, x + x0);
            }
        }
    }
    min_max_in_place(&mut crop.data);
    let mut out = if side == IMAGE_SIZE { crop } else { resize_bicubic(&crop, IMAGE_SIZE, IMAGE_SIZE) };
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    min_max_in_place(&mut out.data);
    Ok(out)
}

/// Bounds for random augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    /// Brightness and contrast factors are drawn from `[1 − j, 1 + j]`.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_prob: 0.5, max_rotation_deg: 15.0, jitter: 0.2 }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub rotation_deg: f64,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { flip: false, rotation_deg: 0.0, brightness: 1.0, contrast: 1.0 };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));
        let r = cfg.max_rotation_deg.abs();
        let rotation_deg = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let j = cfg.jitter.abs();
        let mut factor = || if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        let brightness = factor();
        let contrast = factor();
        AugmentParams { flip, rotation_deg, brightness, contrast }
    }
}

/// Applies horizontal flip, rotation about the centre (bilinear, zero
/// fill), brightness then contrast jitter, and clamps to [0, 1].
pub fn augment_with(img: &ImageTensor, p: &AugmentParams) -> ImageTensor {
    let (h, w) = (img.height, img.width);
    let mut out = img.clone();
    if p.flip {
        for c in 0..img.channels {
            for y in 0..h {
                for x in 0..w {
                    out.data[(c * h + y) * w + x] = img.at(c, y, w - 1 - x);
                }
            }
        }
    }
    if p.rotation_deg != 0.0 {
        let src = out.clone();
        let (s, co) = p.rotation_deg.to_radians().sin_cos();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let sample = |c: usize, y: isize, x: isize| {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                src.at(c, y as usize, x as usize)
            }
        };
        for c in 0..img.channels {
            for y in 0..h {
                for x in 0..w {
                    // inverse map output pixel into the source
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let sx = co * dx + s * dy + cx;
                    let sy = -s * dx + co * dy + cy;
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let v = (1.0 - fy) * ((1.0 - fx) * sample(c, y0, x0) + fx * sample(c, y0, x0 + 1))
                        + fy * ((1.0 - fx) * sample(c, y0 + 1, x0) + fx * sample(c, y0 + 1, x0 + 1));
                    out.data[(c * h + y) * w + x] = v;
                }
            }
        }
    }
    if p.brightness != 1.0 {
        out.data.iter_mut().for_each(|v| *v *= p.brightness);
    }
    if p.contrast != 1.0 {
        let mean = out.data.iter().sum::<f64>() / out.data.len() as f64;
        out.data.iter_mut().for_each(|v| *v = (*v - mean) * p.contrast + mean);
    }
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Draws parameters from `rng` and applies them.
pub fn augment_image<R: Rng + ?Sized>(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    augment_with(img, &AugmentParams::sample(cfg, rng))
}
