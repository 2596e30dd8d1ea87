use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::pipeline::ImageU8;

/// Training images and the held-out validation images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<ImageU8>,
    pub val: Vec<ImageU8>,
}

impl Dataset {
    /// Holds out the last `val_count` images.
    pub fn split(mut images: Vec<ImageU8>, val_count: usize) -> Result<Self> {
        if images.len() < val_count + 2 {
            return Err(config_err!(
                "need at least {} images ({val_count} held out, 2 for training), got {}",
                val_count + 2,
                images.len()
            ));
        }
        let val = images.split_off(images.len() - val_count);
        Ok(Self { train: images, val })
    }
}

/// Every `.png` in `dir`, sorted by file name.
pub fn load_png_dir(dir: impl AsRef<Path>) -> Result<Vec<ImageU8>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths.iter().map(ImageU8::read_png).collect()
}

pub fn random_crop<R: Rng>(image: &ImageU8, size: usize, rng: &mut R) -> Result<ImageU8> {
    let (w, h) = image.dims();
    if w < size || h < size {
        return Err(config_err!("{w}×{h} image is smaller than the {size}×{size} crop"));
    }
    let x = rng.random_range(0..=w - size);
    let y = rng.random_range(0..=h - size);
    image.crop(x, y, size, size)
}

/// Per-channel mean and std over all pixels, in `[0, 1]` units.
pub fn channel_stats(images: &[ImageU8]) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut n = 0usize;
    for im in images {
        for px in im.data().chunks_exact(3) {
            for c in 0..3 {
                let v = px[c] as f64 / 255.0;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += im.data().len() / 3;
    }
    let n = n.max(1) as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0.0; 3];
    for c in 0..3 {
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(1e-12).sqrt();
    }
    (mean, std)
}

struct Shape2 {
    kind: u8,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    color: [f64; 3],
    freq: f64,
    phase: f64,
}

/// Deterministic stand-in for a photo corpus: colour gradients, hard-edged
/// and soft shapes, striped textures and a little sensor noise. Pixel
/// values cover the whole 8-bit range.
pub fn synthetic_images(count: usize, width: usize, height: usize, seed: u64) -> Vec<ImageU8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(width, height, &mut rng)).collect()
}

fn synthetic_image(width: usize, height: usize, rng: &mut ChaCha8Rng) -> ImageU8 {
    let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_: u8| rng.random_range(0.0..255.0));
    let (c0, c1) = (color(rng), color(rng));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let (w, h) = (width as f64, height as f64);
    let mut shapes: Vec<Shape2> = (0..rng.random_range(3..9))
        .map(|_| Shape2 {
            kind: rng.random_range(0..3),
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            rx: rng.random_range(0.08..0.4) * w,
            ry: rng.random_range(0.08..0.4) * h,
            color: color(rng),
            freq: rng.random_range(0.15..0.9),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    shapes.sort_by(|a, b| b.rx.partial_cmp(&a.rx).unwrap());
    let noise = rng.random_range(0.0..6.0);
    let mut out = ImageU8::from_fn(width, height, |_, _, _| 0);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let t = ((fx / w - 0.5) * dx + (fy / h - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            let mut px = [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t);
            for s in &shapes {
                let u = (fx - s.cx) / s.rx;
                let v = (fy - s.cy) / s.ry;
                let r2 = u * u + v * v;
                let alpha = match s.kind {
                    0 => (r2 <= 1.0) as u8 as f64,
                    1 => (u.abs() <= 1.0 && v.abs() <= 1.0) as u8 as f64,
                    _ => (-r2 * 1.5).exp(),
                };
                if alpha <= 0.0 {
                    continue;
                }
                let stripe = 0.5 + 0.5 * ((fx * s.freq + fy * s.freq * 0.7) + s.phase).sin();
                for (p, &col) in px.iter_mut().zip(&s.color) {
                    let tex = if s.kind == 1 { col * (0.6 + 0.4 * stripe) } else { col };
                    *p = *p * (1.0 - alpha) + tex * alpha;
                }
            }
            for (c, p) in px.iter().enumerate() {
                let n = rng.random_range(-noise..=noise);
                out.set(x, y, c, (p + n).clamp(0.0, 255.0).round() as u8);
            }
        }
    }
    out
}

/// Disjoint `(host, secret)` index pairs from a fresh shuffle.
pub(crate) fn shuffled_pairs<R: Rng>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(2).map(|p| (p[0], p[1])).collect()
}
