//! Raw tensor kernels shared by the eager and recording backends.

use crate::diffcore::tensor::{Element, Shape, Tensor};
use crate::error::{shape_err, Result};

/// Checks conv2d operand shapes and returns the output shape.
pub fn conv2d_shape(x: Shape, w: Shape, b: Shape, padding: usize) -> Result<Shape> {
    if w.h != w.w {
        return Err(shape_err!("conv kernel must be square, got {w}"));
    }
    if w.c != x.c {
        return Err(shape_err!(
            "conv kernel {w} expects {} input channels, input is {x}",
            w.c
        ));
    }
    if b.len() != w.n {
        return Err(shape_err!("conv bias {b} does not match {} output channels", w.n));
    }
    let k = w.h;
    if x.h + 2 * padding < k || x.w + 2 * padding < k {
        return Err(shape_err!("conv kernel {w} larger than padded input {x}"));
    }
    Ok(Shape::new(
        x.n,
        w.n,
        x.h + 2 * padding + 1 - k,
        x.w + 2 * padding + 1 - k,
    ))
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// For output column `ox` and kernel column `kx`, the valid `ox` range
    /// whose source column lies inside the input.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.cols();
    col.fill(T::zero());
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let src = &plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        d[ox] = src[ox + kx - g.pad];
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..g.oh {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let d = &mut plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                    let s = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        d[ox + kx - g.pad] = d[ox + kx - g.pad] + s[ox];
                    }
                }
            }
        }
    }
}

/// Row-major matrix view with optional transpose.
#[derive(Clone, Copy)]
struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c ← a·b + beta·c`, `c` row-major.
fn matmul<T: Element>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "inner dimensions");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= m * n);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn geometry(x: Shape, w: Shape, padding: usize, out: Shape) -> ConvGeom {
    ConvGeom {
        cin: x.c,
        h: x.h,
        w: x.w,
        k: w.h,
        pad: padding,
        oh: out.h,
        ow: out.w,
    }
}

/// 2-D cross-correlation, stride 1, zero padding.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let out = conv2d_shape(x.shape(), weight.shape(), bias.shape(), padding)?;
    let g = geometry(x.shape(), weight.shape(), padding, out);
    let (rows, cols) = (g.rows(), g.cols());
    let wmat = Mat::new(weight.data(), out.c, rows);
    let mut col = vec![T::zero(); rows * cols];
    let mut y = vec![T::zero(); out.len()];
    let bias = bias.data();
    for n in 0..x.shape().n {
        let xin = &x.data()[n * x.shape().item_len()..(n + 1) * x.shape().item_len()];
        im2col(&g, xin, &mut col);
        let yout = &mut y[n * out.item_len()..(n + 1) * out.item_len()];
        for (oc, chunk) in yout.chunks_mut(cols).enumerate() {
            chunk.fill(bias[oc]);
        }
        matmul(wmat, Mat::new(&col, rows, cols), T::one(), yout);
    }
    Tensor::new(out, y)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let ws = weight.shape();
    let out = conv2d_shape(x.shape(), ws, Shape::new(ws.n, 1, 1, 1), padding)?;
    if grad_out.shape() != out {
        return Err(shape_err!(
            "conv gradient {} does not match output {out}",
            grad_out.shape()
        ));
    }
    let g = geometry(x.shape(), ws, padding, out);
    let (rows, cols) = (g.rows(), g.cols());
    let wmat = Mat::new(weight.data(), out.c, rows);
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); out.c];
    let item_in = x.shape().item_len();
    for n in 0..x.shape().n {
        let xin = &x.data()[n * item_in..(n + 1) * item_in];
        let gy = &grad_out.data()[n * out.item_len()..(n + 1) * out.item_len()];
        for (oc, chunk) in gy.chunks(cols).enumerate() {
            db[oc] = db[oc] + chunk.iter().copied().sum();
        }
        im2col(&g, xin, &mut col);
        let gmat = Mat::new(gy, out.c, cols);
        matmul(gmat, Mat::new(&col, rows, cols).t(), T::one(), &mut dw);
        matmul(wmat.t(), gmat, T::zero(), &mut dcol);
        col2im(&g, &dcol, &mut dx[n * item_in..(n + 1) * item_in]);
    }
    Ok((
        Tensor::new(x.shape(), dx)?,
        Tensor::new(ws, dw)?,
        Tensor::new(Shape::new(ws.n, 1, 1, 1), db)?,
    ))
}

/// `out[i] = x[index[i]]`.
pub fn gather<T: Element>(x: &Tensor<T>, index: &[u32], out_shape: Shape) -> Result<Tensor<T>> {
    if index.len() != out_shape.len() {
        return Err(shape_err!(
            "gather index of length {} does not fit {out_shape}",
            index.len()
        ));
    }
    let src = x.data();
    let mut data = Vec::with_capacity(index.len());
    for &i in index {
        let v = *src
            .get(i as usize)
            .ok_or_else(|| shape_err!("gather index {i} out of bounds for {}", x.shape()))?;
        data.push(v);
    }
    Tensor::new(out_shape, data)
}

/// Adjoint of [`gather`]: `out[index[i]] += g[i]`.
pub fn scatter_add<T: Element>(g: &Tensor<T>, index: &[u32], out_shape: Shape) -> Tensor<T> {
    let mut out = vec![T::zero(); out_shape.len()];
    for (&i, &v) in index.iter().zip(g.data()) {
        out[i as usize] = out[i as usize] + v;
    }
    Tensor::new(out_shape, out).expect("scatter shape")
}

pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if start + len > s.c {
        return Err(shape_err!(
            "channel range {start}..{} out of bounds for {s}",
            start + len
        ));
    }
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.n * len * plane);
    for n in 0..s.n {
        let base = n * s.item_len() + start * plane;
        data.extend_from_slice(&x.data()[base..base + len * plane]);
    }
    Tensor::new(s.with_channels(len), data)
}

pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err!("cannot concatenate an empty list"))?
        .shape();
    let mut c = 0;
    for p in parts {
        let s = p.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(shape_err!("cannot concatenate {s} with {first}"));
        }
        c += s.c;
    }
    let out = first.with_channels(c);
    let mut data = Vec::with_capacity(out.len());
    for n in 0..first.n {
        for p in parts {
            let item = p.shape().item_len();
            data.extend_from_slice(&p.data()[n * item..(n + 1) * item]);
        }
    }
    Tensor::new(out, data)
}

/// `out[n,c,…] = x[n,c,…]·scale[c] + shift[c]`.
pub fn channel_affine<T: Element>(x: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    let s = x.shape();
    if scale.len() != s.c || shift.len() != s.c {
        return Err(shape_err!(
            "per-channel affine with {} / {} coefficients on {s}",
            scale.len(),
            shift.len()
        ));
    }
    let plane = s.plane();
    let mut data = x.to_vec();
    for (i, chunk) in data.chunks_mut(plane).enumerate() {
        let c = i % s.c;
        for v in chunk {
            *v = *v * scale[c] + shift[c];
        }
    }
    Tensor::new(s, data)
}

pub fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop reference, accumulated in f64.
    fn naive_conv(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>, pad: usize) -> Vec<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = xs.h + 2 * pad + 1 - k;
        let ow = xs.w + 2 * pad + 1 - k;
        let mut out = Vec::new();
        for n in 0..xs.n {
            for oc in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[oc] as f64;
                        for ic in 0..xs.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    let ix = ox as isize + kx as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += x.get(n, ic, iy as usize, ix as usize) as f64
                                        * w.get(oc, ic, ky, kx) as f64;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn one_by_one_conv_is_affine() {
        let x = Tensor::<f32>::ones(Shape::new(1, 1, 2, 2));
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 2.0);
        let b = Tensor::full(Shape::new(1, 1, 1, 1), 0.5);
        let y = conv2d(&x, &w, &b, 0).unwrap();
        assert_eq!(y.data(), &[2.5; 4]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape::new(2, 1, 5, 6), &mut rng);
        let w = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| if h == 1 && w == 1 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert_eq!(conv2d(&x, &w, &b, 1).unwrap(), x);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (shape, ws, pad) in [
            (Shape::new(1, 2, 4, 4), Shape::new(3, 2, 3, 3), 1),
            (Shape::new(2, 3, 8, 7), Shape::new(4, 3, 3, 3), 1),
            (Shape::new(1, 2, 8, 8), Shape::new(2, 2, 5, 5), 2),
            (Shape::new(1, 2, 6, 6), Shape::new(2, 2, 3, 3), 0),
        ] {
            let x = random(shape, &mut rng);
            let w = random(ws, &mut rng);
            let b = random(Shape::new(ws.n, 1, 1, 1), &mut rng);
            let y = conv2d(&x, &w, &b, pad).unwrap();
            let reference = naive_conv(&x, &w, &b, pad);
            assert_eq!(y.len(), reference.len());
            for (a, r) in y.data().iter().zip(&reference) {
                assert!((*a as f64 - r).abs() < 1e-6, "{a} vs {r}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert!(matches!(conv2d(&x, &w, &b, 1), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn backward_matches_adjoint_identity() {
        // <conv(x), g> must equal <x, dx> + <w, dw> + <b, db> since conv is
        // bilinear in (x, w) plus an affine bias: check each part separately.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Shape::new(2, 2, 5, 5), &mut rng).cast::<f64>();
        let w = random(Shape::new(3, 2, 3, 3), &mut rng).cast::<f64>();
        let zero_b = Tensor::<f64>::zeros(Shape::new(3, 1, 1, 1));
        let g = random(Shape::new(2, 3, 5, 5), &mut rng).cast::<f64>();
        let y = conv2d(&x, &w, &zero_b, 1).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let (dx, dw, db) = conv2d_backward(&x, &w, &g, 1).unwrap();
        let via_x: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        let via_w: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-9);
        assert!((lhs - via_w).abs() < 1e-9);
        let gsum: Vec<f64> = (0..3)
            .map(|oc| (0..2).map(|n| (0..25).map(|p| g.data()[(n * 3 + oc) * 25 + p]).sum::<f64>()).sum())
            .collect();
        for (a, b) in db.data().iter().zip(&gsum) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
