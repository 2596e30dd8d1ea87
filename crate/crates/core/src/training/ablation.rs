use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{fmt_psnr, fmt_ssim};
use crate::training::data::Dataset;
use crate::training::train::train;
use crate::training::{PreprocessChoice, TrainConfig};

/// One row of the sweep: a preprocessing mode and a decay rate, `None`
/// meaning no decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AblationVariant {
    pub preprocess: PreprocessChoice,
    pub decay: Option<f64>,
}

/// Normalize without decay, then Standardize without decay and with
/// `r ∈ {0.9, 0.8, 0.7, 0.6, 0.5}`.
pub fn default_variants() -> Vec<AblationVariant> {
    let mut v = vec![
        AblationVariant { preprocess: PreprocessChoice::Normalize, decay: None },
        AblationVariant { preprocess: PreprocessChoice::Standardize, decay: None },
    ];
    v.extend([0.9, 0.8, 0.7, 0.6, 0.5].map(|r| AblationVariant {
        preprocess: PreprocessChoice::Standardize,
        decay: Some(r),
    }));
    v
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub psnr_c: f64,
    pub psnr_s: f64,
    pub ssim_c: f64,
    pub ssim_s: f64,
    /// Final validation loss.
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub steps: usize,
    pub rows: Vec<AblationRow>,
}

fn preprocess_name(p: PreprocessChoice) -> &'static str {
    match p {
        PreprocessChoice::Normalize => "Normalize",
        PreprocessChoice::Standardize => "Standardize",
    }
}

fn decay_label(d: Option<f64>) -> String {
    d.map_or_else(|| "×".to_owned(), |r| format!("{r}"))
}

impl AblationReport {
    /// Row with the lowest loss.
    pub fn best(&self) -> Option<&AblationRow> {
        self.rows.iter().min_by(|a, b| a.loss.total_cmp(&b.loss))
    }

    /// Relative loss change of `row` against the Standardize, no-decay row,
    /// as a percentage (negative is better).
    pub fn change_vs_baseline(&self, row: &AblationRow) -> Option<f64> {
        let base = self.rows.iter().find(|r| {
            r.variant.preprocess == PreprocessChoice::Standardize && r.variant.decay.is_none()
        })?;
        Some(100.0 * (row.loss - base.loss) / base.loss)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["preprocess", "decay_rate", "psnr_c", "psnr_s", "ssim_c", "ssim_s", "loss"])?;
        for r in &self.rows {
            w.write_record([
                preprocess_name(r.variant.preprocess).to_owned(),
                r.variant.decay.map_or_else(|| "off".to_owned(), |d| d.to_string()),
                format!("{:.4}", r.psnr_c),
                format!("{:.4}", r.psnr_s),
                format!("{:.6}", r.ssim_c),
                format!("{:.6}", r.ssim_s),
                format!("{:.6}", r.loss),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>8} {:>8} {:>7} {:>7} {:>9} {:>8}",
            "Pre-process", "r", "PSNR-C", "PSNR-S", "SSIM-C", "SSIM-S", "Loss", "vs base"
        )?;
        for r in &self.rows {
            let change = self
                .change_vs_baseline(r)
                .map_or_else(|| "-".to_owned(), |c| format!("{c:+.2}%"));
            writeln!(
                f,
                "{:<12} {:>6} {:>8} {:>8} {:>7} {:>7} {:>9.3} {:>8}",
                preprocess_name(r.variant.preprocess),
                decay_label(r.variant.decay),
                fmt_psnr(r.psnr_c),
                fmt_psnr(r.psnr_s),
                fmt_ssim(r.ssim_c),
                fmt_ssim(r.ssim_s),
                r.loss,
                change
            )?;
        }
        match self.best() {
            Some(b) => write!(
                f,
                "lowest loss: {} r={} ({} steps per row)",
                preprocess_name(b.variant.preprocess),
                decay_label(b.variant.decay),
                self.steps
            ),
            None => write!(f, "no rows"),
        }
    }
}

/// Trains one model per variant from the same seed and data, everything
/// else taken from `base`. `on_row` sees each row as it finishes.
pub fn run_ablation(
    dataset: &Dataset,
    base: &TrainConfig,
    variants: &[AblationVariant],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = TrainConfig {
            preprocess: variant.preprocess,
            decay_rate: variant.decay.unwrap_or(1.0),
            ..base.clone()
        };
        let (_, history) = train(dataset, &cfg)?;
        let m = history.last.report;
        let row = AblationRow {
            variant,
            psnr_c: m.c.psnr,
            psnr_s: m.s.psnr,
            ssim_c: m.c.ssim,
            ssim_s: m.s.ssim,
            loss: history.last.loss,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationReport {
        steps: base.total_steps(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::synthetic_images;

    #[test]
    fn default_sweep_has_table_shape() {
        let v = default_variants();
        assert_eq!(v.len(), 7);
        assert_eq!(v[0].preprocess, PreprocessChoice::Normalize);
        assert_eq!(v[6].decay, Some(0.5));
    }

    #[test]
    fn tiny_sweep_emits_every_row() {
        let ds = Dataset::split(synthetic_images(6, 24, 24, 3), 2).unwrap();
        let base = TrainConfig {
            epochs: 1,
            steps_per_epoch: 1,
            batch_size: 1,
            crop_size: 16,
            n_blocks: 2,
            hidden: 4,
            ..TrainConfig::desk()
        };
        let variants = &default_variants()[..3];
        let mut seen = 0;
        let report = run_ablation(&ds, &base, variants, |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        assert_eq!(report.to_csv().unwrap().lines().count(), 4);
        let text = report.to_string();
        assert!(text.contains("Normalize") && text.contains("0.9"));
        assert_eq!(report.change_vs_baseline(&report.rows[1]), Some(0.0));
    }
}
