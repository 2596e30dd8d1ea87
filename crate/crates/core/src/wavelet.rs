//! Orthonormal single-level Haar transform.
//!
//! Each 2×2 pixel block `[[a, b], [c, d]]` of a source channel maps to four
//! coefficients stored as consecutive output channels `4·ch + band`:
//!
//! | band | value             |
//! |------|-------------------|
//! | LL   | (a + b + c + d)/2 |
//! | LH   | (a − b + c − d)/2 |
//! | HL   | (a + b − c − d)/2 |
//! | HH   | (a − b − c + d)/2 |
//!
//! The 4×4 matrix is symmetric and orthogonal, so it is its own inverse.

use crate::diffcore::{Element, Shape, Tensor};
use crate::error::{geometry_err, Result};

pub const BANDS: usize = 4;

/// Shape of the coefficient tensor produced from a pixel tensor of `shape`.
pub fn coeff_shape(shape: Shape) -> Result<Shape> {
    if !shape.h.is_multiple_of(2) || !shape.w.is_multiple_of(2) {
        return Err(geometry_err!(
            "Haar transform needs even height and width, got {shape}"
        ));
    }
    Ok(Shape::new(shape.n, shape.c * BANDS, shape.h / 2, shape.w / 2))
}

/// Shape of the pixel tensor reconstructed from coefficients of `shape`.
pub fn pixel_shape(shape: Shape) -> Result<Shape> {
    if !shape.c.is_multiple_of(BANDS) {
        return Err(geometry_err!(
            "inverse Haar transform needs a channel count divisible by 4, got {shape}"
        ));
    }
    Ok(Shape::new(shape.n, shape.c / BANDS, shape.h * 2, shape.w * 2))
}

#[inline]
fn butterfly<T: Element>(a: T, b: T, c: T, d: T) -> [T; 4] {
    let half = T::from_f64_lossy(0.5);
    [
        (a + b + c + d) * half,
        (a - b + c - d) * half,
        (a + b - c - d) * half,
        (a - b - c + d) * half,
    ]
}

/// Forward transform: `(n, c, h, w) → (n, 4c, h/2, w/2)`.
pub fn dwt<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let out = coeff_shape(s)?;
    let (hh, hw) = (out.h, out.w);
    let src = x.data();
    let mut dst = vec![T::zero(); out.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = &src[s.index(n, c, 0, 0)..][..s.plane()];
            let base = out.index(n, c * BANDS, 0, 0);
            let band = out.plane();
            for i in 0..hh {
                let top = &plane[2 * i * s.w..][..s.w];
                let bottom = &plane[(2 * i + 1) * s.w..][..s.w];
                for j in 0..hw {
                    let coeffs = butterfly(top[2 * j], top[2 * j + 1], bottom[2 * j], bottom[2 * j + 1]);
                    for (k, v) in coeffs.into_iter().enumerate() {
                        dst[base + k * band + i * hw + j] = v;
                    }
                }
            }
        }
    }
    Tensor::new(out, dst)
}

/// Inverse transform: `(n, 4c, h, w) → (n, c, 2h, 2w)`.
pub fn idwt<T: Element>(coeffs: &Tensor<T>) -> Result<Tensor<T>> {
    let s = coeffs.shape();
    let out = pixel_shape(s)?;
    let src = coeffs.data();
    let band = s.plane();
    let mut dst = vec![T::zero(); out.len()];
    for n in 0..out.n {
        for c in 0..out.c {
            let base = s.index(n, c * BANDS, 0, 0);
            let plane = out.index(n, c, 0, 0);
            for i in 0..s.h {
                for j in 0..s.w {
                    let at = |k: usize| src[base + k * band + i * s.w + j];
                    let [a, b, cc, d] = butterfly(at(0), at(1), at(2), at(3));
                    let top = plane + 2 * i * out.w + 2 * j;
                    let bottom = top + out.w;
                    dst[top] = a;
                    dst[top + 1] = b;
                    dst[bottom] = cc;
                    dst[bottom + 1] = d;
                }
            }
        }
    }
    Tensor::new(out, dst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_example() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = dwt(&x).unwrap();
        assert_eq!(w.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(w.data(), &[5.0, -1.0, -2.0, 0.0]);
    }

    #[test]
    fn constant_image_goes_to_ll() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 4, 6), 0.75);
        let w = dwt(&x).unwrap();
        for n in 0..2 {
            for c in 0..12 {
                let expected = if c % 4 == 0 { 1.5 } else { 0.0 };
                for i in 0..2 {
                    for j in 0..3 {
                        assert_eq!(w.get(n, c, i, j), expected);
                    }
                }
            }
        }
        assert_eq!(idwt(&w).unwrap(), x);
    }

    #[test]
    fn zeros_map_to_zeros() {
        let z = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        assert_eq!(dwt(&z).unwrap(), Tensor::zeros(Shape::new(1, 12, 2, 2)));
        let zc = Tensor::<f32>::zeros(Shape::new(1, 8, 2, 2));
        assert_eq!(idwt(&zc).unwrap(), Tensor::zeros(Shape::new(1, 2, 4, 4)));
    }

    #[test]
    fn rejects_bad_geometry() {
        let odd = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(dwt(&odd), Err(crate::Error::Geometry(_))));
        let bad = Tensor::<f32>::zeros(Shape::new(1, 6, 2, 2));
        assert!(matches!(idwt(&bad), Err(crate::Error::Geometry(_))));
    }

    fn tensor_strategy() -> impl Strategy<Value = Tensor<f32>> {
        (1usize..3, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(n, c, h, w)| {
            let shape = Shape::new(n, c, 2 * h, 2 * w);
            prop::collection::vec(-10.0f32..10.0, shape.len())
                .prop_map(move |data| Tensor::new(shape, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(x in tensor_strategy()) {
            let back = idwt(&dwt(&x).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-5);
        }

        #[test]
        fn preserves_energy(x in tensor_strategy()) {
            let e_pix: f64 = x.data().iter().map(|v| (*v as f64).powi(2)).sum();
            let e_coef: f64 = dwt(&x).unwrap().data().iter().map(|v| (*v as f64).powi(2)).sum();
            prop_assert!((e_pix - e_coef).abs() <= 1e-3 * e_pix.max(1e-12));
        }

        #[test]
        fn is_linear(x in tensor_strategy(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let x = x.cast::<f64>();
            let y = x.map(|v| (v * 0.37).sin() * 5.0);
            let combo = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
            let lhs = dwt(&combo).unwrap();
            let (dx, dy) = (dwt(&x).unwrap(), dwt(&y).unwrap());
            let rhs = dx.zip_map(&dy, |a, b| alpha * a + beta * b).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
        }
    }
}
