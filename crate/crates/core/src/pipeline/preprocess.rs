use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Ops};
use crate::error::{config_err, Result};

/// How 8-bit pixels are mapped into the model's value range.
///
/// `Normalize` is `p / 255`. `Standardize` is `(p / 255 − mean) / std` with
/// per-channel constants measured on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
#[derive(Default)]
pub enum PreprocessMode {
    #[default]
    Normalize,
    Standardize { mean: [f64; 3], std: [f64; 3] },
}


impl PreprocessMode {
    pub fn standardize(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(config_err!("standardize needs finite means and positive stds"));
        }
        Ok(Self::Standardize { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Normalize => Ok(()),
            Self::Standardize { mean, std } => Self::standardize(*mean, *std).map(|_| ()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normalize => "Normalize",
            Self::Standardize { .. } => "Standardize",
        }
    }

    /// Per-channel `(scale, shift)` taking pixel values to model values.
    pub fn forward_coefficients<T: Element>(&self) -> (Vec<T>, Vec<T>) {
        let (scale, shift): (Vec<f64>, Vec<f64>) = match self {
            Self::Normalize => (vec![1.0 / 255.0; 3], vec![0.0; 3]),
            Self::Standardize { mean, std } => (0..3)
                .map(|c| (1.0 / (255.0 * std[c]), -mean[c] / std[c]))
                .unzip(),
        };
        (cast(&scale), cast(&shift))
    }

    /// Per-channel `(scale, shift)` taking model values back to pixels.
    pub fn inverse_coefficients<T: Element>(&self) -> (Vec<T>, Vec<T>) {
        let (scale, shift): (Vec<f64>, Vec<f64>) = match self {
            Self::Normalize => (vec![255.0; 3], vec![0.0; 3]),
            Self::Standardize { mean, std } => (0..3)
                .map(|c| (255.0 * std[c], 255.0 * mean[c]))
                .unzip(),
        };
        (cast(&scale), cast(&shift))
    }

    pub fn apply<T: Element, O: Ops<T>>(&self, ops: &mut O, pixels: &O::Value) -> Result<O::Value> {
        let (scale, shift) = self.forward_coefficients();
        ops.channel_affine(pixels, &scale, &shift)
    }

    pub fn invert<T: Element, O: Ops<T>>(&self, ops: &mut O, values: &O::Value) -> Result<O::Value> {
        let (scale, shift) = self.inverse_coefficients();
        ops.channel_affine(values, &scale, &shift)
    }
}

fn cast<T: Element>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Eager, Shape, Tensor};

    #[test]
    fn round_trip_recovers_pixels() {
        let mode = PreprocessMode::standardize([0.4, 0.5, 0.6], [0.2, 0.25, 0.3]).unwrap();
        let px = Tensor::<f32>::from_fn(Shape::new(1, 3, 2, 2), |_, c, h, w| (c * 80 + h * 20 + w * 3) as f32);
        let v = mode.apply(&mut Eager, &px).unwrap();
        let back = mode.invert(&mut Eager, &v).unwrap();
        assert!(back.max_abs_diff(&px).unwrap() < 1e-3);
    }

    #[test]
    fn normalize_maps_to_unit_range() {
        let px = Tensor::<f32>::full(Shape::new(1, 3, 1, 1), 255.0);
        let v = PreprocessMode::Normalize.apply(&mut Eager, &px).unwrap();
        assert!(v.data().iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn rejects_non_positive_std() {
        assert!(PreprocessMode::standardize([0.5; 3], [0.2, 0.0, 0.1]).is_err());
    }

    #[test]
    fn serializes_with_mode_tag() {
        let s = serde_json::to_string(&PreprocessMode::Normalize).unwrap();
        assert_eq!(s, r#"{"mode":"normalize"}"#);
    }
}
