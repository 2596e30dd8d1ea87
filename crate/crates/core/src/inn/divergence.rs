//! How far each block's secret-pipeline output has drifted from the secret.

use std::fmt;

use serde::Serialize;

use crate::diffcore::{Eager, Ops, Tensor};
use crate::error::{geometry_err, Result};
use crate::inn::Model;
use crate::metrics::{fmt_psnr, fmt_ssim, PairMetrics};
use crate::pipeline::{check_geometry, images_to_tensor, tensor_to_images, to_wavelet, ImageU8};

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceRow {
    /// `0` is the secret as it enters the first block.
    pub index: usize,
    /// Metrics after matching the secret's per-channel mean and std.
    pub aligned: PairMetrics,
    /// Metrics on the clamped state with no alignment.
    pub raw: PairMetrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceReport {
    pub rows: Vec<DivergenceRow>,
}

impl DivergenceReport {
    /// Direction of aligned SSIM across the blocks: `"decreasing"`,
    /// `"increasing"` or `"mixed"`. Reported, never enforced.
    pub fn trend(&self) -> &'static str {
        let s: Vec<f64> = self.rows.iter().map(|r| r.aligned.ssim).collect();
        let pairs = || s.windows(2);
        if pairs().all(|p| p[1] <= p[0] + 1e-9) {
            "decreasing"
        } else if pairs().all(|p| p[1] + 1e-9 >= p[0]) {
            "increasing"
        } else {
            "mixed"
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["block", "psnr", "ssim", "apd", "raw_psnr", "raw_ssim", "raw_apd"])?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                fmt_psnr(r.aligned.psnr),
                format!("{:.6}", r.aligned.ssim),
                format!("{:.4}", r.aligned.apd),
                fmt_psnr(r.raw.psnr),
                format!("{:.6}", r.raw.ssim),
                format!("{:.4}", r.raw.apd),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>8} {:>7} {:>8}", "block", "PSNR", "SSIM", "APD")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>8} {:>7} {:>8.3}",
                r.index,
                fmt_psnr(r.aligned.psnr),
                fmt_ssim(r.aligned.ssim),
                r.aligned.apd
            )?;
        }
        write!(f, "trend: {}", self.trend())
    }
}

/// Shifts and scales each channel of `x` to the mean and std of `target`.
fn align(x: &Tensor, target: &Tensor) -> Tensor {
    let s = x.shape();
    let plane = s.h * s.w;
    let stats = |t: &Tensor, c: usize| {
        let v = &t.data()[c * plane..(c + 1) * plane];
        let mean = v.iter().map(|&a| a as f64).sum::<f64>() / plane as f64;
        let var = v.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
        (mean, var.sqrt())
    };
    let mut out = x.to_vec();
    for c in 0..s.c {
        let (mx, sx) = stats(x, c);
        let (mt, st) = stats(target, c);
        let gain = if sx > 1e-12 { st / sx } else { 0.0 };
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v = ((*v as f64 - mx) * gain + mt) as f32;
        }
    }
    Tensor::new(s, out).expect("same length")
}

/// Per-block metrics between each secret-pipeline state `x_s^i` and the
/// secret, for `i = 0..=n_blocks`.
pub fn secret_divergence_report(
    model: &Model,
    host: &ImageU8,
    secret: &ImageU8,
    passphrase: &[u8],
) -> Result<DivergenceReport> {
    if host.dims() != secret.dims() {
        return Err(geometry_err!(
            "host is {:?}, secret is {:?}",
            host.dims(),
            secret.dims()
        ));
    }
    let (w, h) = host.dims();
    check_geometry(model, w, h)?;
    let schedule = model.schedule(passphrase, h, w)?;
    let secret_px = images_to_tensor(&[secret])?;
    let out = model.forward_with(
        &mut Eager,
        model.params(),
        &to_wavelet(model, &images_to_tensor(&[host])?)?,
        &to_wavelet(model, &secret_px)?,
        &schedule,
        true,
    )?;
    let rows = out
        .secret_states
        .iter()
        .enumerate()
        .map(|(index, state)| {
            let v = Eager.idwt(state)?;
            let px = model.config().preprocess.invert(&mut Eager, &v)?;
            let raw = tensor_to_images(&px)?.remove(0);
            let aligned = tensor_to_images(&align(&px, &secret_px))?.remove(0);
            Ok(DivergenceRow {
                index,
                aligned: PairMetrics::measure(secret, &aligned)?,
                raw: PairMetrics::measure(secret, &raw)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DivergenceReport { rows })
}
