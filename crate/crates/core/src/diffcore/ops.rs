use std::sync::Arc;

use crate::diffcore::kernels;
use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};
use crate::wavelet;

/// The closed operation set every model computation is written against.
///
/// [`Eager`] evaluates immediately and records nothing; [`Graph`] records a
/// tape for reverse-mode differentiation. Model code is generic over this
/// trait so inference and training share one definition.
///
/// [`Graph`]: crate::diffcore::Graph
pub trait Ops<T: Element> {
    type Value: Clone;

    /// Wraps a tensor that is not differentiated.
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        bias: &Self::Value,
        padding: usize,
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `a·mul + add` with scalar coefficients.
    fn affine(&mut self, a: &Self::Value, mul: T, add: T) -> Result<Self::Value>;
    fn exp(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn leaky_relu(&mut self, a: &Self::Value, alpha: T) -> Result<Self::Value>;
    fn square(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Sum of all entries as a `(1,1,1,1)` tensor.
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn slice_channels(&mut self, a: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn concat_channels(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn reshape(&mut self, a: &Self::Value, shape: Shape) -> Result<Self::Value>;
    /// `out[i] = a[index[i]]`; output keeps the shape of `a`.
    fn gather(&mut self, a: &Self::Value, index: &Arc<Vec<u32>>) -> Result<Self::Value>;
    fn dwt(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn idwt(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Rounds half away from zero; the backward pass is the identity.
    fn round_st(&mut self, a: &Self::Value) -> Result<Self::Value>;
    /// Per-channel `a·scale[c] + shift[c]`.
    fn channel_affine(&mut self, a: &Self::Value, scale: &[T], shift: &[T]) -> Result<Self::Value>;

    fn scale(&mut self, a: &Self::Value, s: T) -> Result<Self::Value> {
        self.affine(a, s, T::zero())
    }
}

pub(crate) fn finite<T: Element>(op: &str, t: Tensor<T>) -> Result<Tensor<T>> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::Contract(format!("{op} produced a non-finite value")))
    }
}

pub(crate) fn leaky<T: Element>(v: T, alpha: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * alpha
    }
}

/// Evaluates operations directly without recording anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Element> Ops<T> for Eager {
    type Value = Tensor<T>;

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        store.value(id).clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
        finite("conv2d", kernels::conv2d(x, w, b, padding)?)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        finite("add", a.zip_map(b, |x, y| x + y)?)
    }

    fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        finite("sub", a.zip_map(b, |x, y| x - y)?)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        finite("mul", a.zip_map(b, |x, y| x * y)?)
    }

    fn affine(&mut self, a: &Tensor<T>, mul: T, add: T) -> Result<Tensor<T>> {
        finite("affine", a.map(|x| x * mul + add))
    }

    fn exp(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        finite("exp", a.map(T::exp))
    }

    fn sigmoid(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        finite("sigmoid", a.map(kernels::sigmoid))
    }

    fn leaky_relu(&mut self, a: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
        finite("leaky_relu", a.map(|v| leaky(v, alpha)))
    }

    fn square(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        finite("square", a.map(|v| v * v))
    }

    fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        finite("sum", Tensor::scalar(a.sum()))
    }

    fn mean(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let n = T::from_usize(a.len().max(1)).expect("length fits");
        finite("mean", Tensor::scalar(a.sum() / n))
    }

    fn slice_channels(&mut self, a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        kernels::slice_channels(a, start, len)
    }

    fn concat_channels(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        kernels::concat_channels(&refs)
    }

    fn reshape(&mut self, a: &Tensor<T>, shape: Shape) -> Result<Tensor<T>> {
        a.reshape(shape)
    }

    fn gather(&mut self, a: &Tensor<T>, index: &Arc<Vec<u32>>) -> Result<Tensor<T>> {
        kernels::gather(a, index, a.shape())
    }

    fn dwt(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        wavelet::dwt(a)
    }

    fn idwt(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        wavelet::idwt(a)
    }

    fn round_st(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(a.map(T::round))
    }

    fn channel_affine(&mut self, a: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
        finite("channel_affine", kernels::channel_affine(a, scale, shift)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_one() {
        let z = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        assert_eq!(Eager.exp(&z).unwrap(), Tensor::ones(z.shape()));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let z = Tensor::<f32>::zeros(Shape::new(2, 1, 2, 2));
        assert_eq!(Eager.sigmoid(&z).unwrap(), Tensor::full(z.shape(), 0.5));
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 3, 4), |_, c, h, w| (c + h) as f32 - w as f32 * 0.3);
        assert_eq!(Eager.mul(&x, &Tensor::ones(x.shape())).unwrap(), x);
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 3));
        assert!(matches!(Eager.add(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(Eager.mul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn leaky_relu_scales_negative_side() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 1, 3), vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(Eager.leaky_relu(&x, 0.2).unwrap().data(), &[-0.4, 0.0, 3.0]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 1, 5), vec![1.4, 1.5, -1.5, 2.0, -0.4]).unwrap();
        assert_eq!(Eager.round_st(&x).unwrap().data(), &[1.0, 2.0, -2.0, 2.0, -0.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let x = Tensor::<f32>::full(Shape::scalar(), 1000.0);
        assert!(matches!(Eager.exp(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn elementwise_ops_are_pure() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 3, 4, 4), |_, c, h, w| ((c * 16 + h * 4 + w) as f32).sin());
        for _ in 0..3 {
            assert_eq!(Eager.sigmoid(&x).unwrap().data(), Eager.sigmoid(&x).unwrap().data());
            assert_eq!(Eager.exp(&x).unwrap().data(), Eager.exp(&x).unwrap().data());
        }
    }
}
