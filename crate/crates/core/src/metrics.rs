//! Image similarity metrics on 8-bit RGB images and the C/S/S′ pair report.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{geometry_err, Result};
use crate::pipeline::ImageU8;

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

fn same_dims(x: &ImageU8, y: &ImageU8) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(geometry_err!(
            "image sizes differ: {:?} vs {:?}",
            x.dims(),
            y.dims()
        ));
    }
    Ok(())
}

/// Average pixel distance: mean absolute difference over every scalar.
pub fn apd(x: &ImageU8, y: &ImageU8) -> Result<f64> {
    same_dims(x, y)?;
    let total: u64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a.abs_diff(b) as u64)
        .sum();
    Ok(total as f64 / x.data().len().max(1) as f64)
}

pub fn mse(x: &ImageU8, y: &ImageU8) -> Result<f64> {
    same_dims(x, y)?;
    let total: u64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.abs_diff(b) as u64;
            d * d
        })
        .sum();
    Ok(total as f64 / x.data().len().max(1) as f64)
}

/// `10·log10(255² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(x: &ImageU8, y: &ImageU8) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 'valid' filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of one channel plane over all fully contained windows.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&prod(a, a), h, w, &k);
    let e_bb = filter_valid(&prod(b, b), h, w, &k);
    let e_ab = filter_valid(&prod(a, b), h, w, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    total / n as f64
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), `C1 = (0.01·255)²`,
/// `C2 = (0.03·255)²`, averaged over valid window positions and then over
/// the three channels.
pub fn ssim(x: &ImageU8, y: &ImageU8) -> Result<f64> {
    same_dims(x, y)?;
    let (w, h) = x.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(geometry_err!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}"
        ));
    }
    let mut sum = 0.0;
    for c in 0..3 {
        let a = x.channel_plane(c);
        let b = y.channel_plane(c);
        sum += ssim_plane(&a, &b, h, w);
    }
    Ok(sum / 3.0)
}

/// PSNR, SSIM and APD of one image pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub apd: f64,
}

impl PairMetrics {
    pub fn measure(x: &ImageU8, y: &ImageU8) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, y)?,
            ssim: ssim(x, y)?,
            apd: apd(x, y)?,
        })
    }

    /// Averages a set of measurements; an infinite PSNR dominates the mean.
    pub fn mean(items: &[Self]) -> Self {
        let n = items.len().max(1) as f64;
        Self {
            psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
            apd: items.iter().map(|m| m.apd).sum::<f64>() / n,
        }
    }
}

/// Metrics of the C-pair (host, container), S-pair (secret, extracted) and
/// S′-pair (secret, wrong-key extraction).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub c: PairMetrics,
    pub s: PairMetrics,
    pub s_prime: Option<PairMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn mean(items: &[Self]) -> Self {
        let c: Vec<_> = items.iter().map(|r| r.c).collect();
        let s: Vec<_> = items.iter().map(|r| r.s).collect();
        let sp: Vec<_> = items.iter().filter_map(|r| r.s_prime).collect();
        Self {
            c: PairMetrics::mean(&c),
            s: PairMetrics::mean(&s),
            s_prime: (!sp.is_empty()).then(|| PairMetrics::mean(&sp)),
        }
    }
}

pub(crate) fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{v:.2}")
    }
}

pub(crate) fn fmt_ssim(v: f64) -> String {
    let s = format!("{v:.4}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (psp, ssp) = match self.s_prime {
            Some(m) => (fmt_psnr(m.psnr), fmt_ssim(m.ssim)),
            None => ("-".into(), "-".into()),
        };
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
            "PSNR-C", "PSNR-S", "SSIM-C", "SSIM-S", "PSNR-S'", "SSIM-S'", "APD-C", "APD-S"
        )?;
        write!(
            f,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6.2} {:>6.2}",
            fmt_psnr(self.c.psnr),
            fmt_psnr(self.s.psnr),
            fmt_ssim(self.c.ssim),
            fmt_ssim(self.s.ssim),
            psp,
            ssp,
            self.c.apd,
            self.s.apd
        )
    }
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}
