//! Fixed-shape tensors with a small reverse-mode differentiation tape.
//!
//! The operation set is closed: convolution, elementwise arithmetic and
//! activations, reductions, channel slicing, and the few structural linear
//! maps the steganography pipeline needs (gather, Haar transforms, rounding
//! with a straight-through gradient, per-channel affine).

mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use ops::{Eager, Ops};
pub use params::{ParamId, ParamStore};
pub use tensor::{Element, Shape, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_form_gradient_is_the_constant() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| (c * 9 + h * 3 + w) as f32 * 0.1);
        let mut store = ParamStore::new();
        let wid = store.insert("w", Tensor::ones(x.shape())).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, wid);
        let xc = g.constant(x.clone());
        let prod = g.mul(&w, &xc).unwrap();
        let loss = g.sum(&prod).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(wid), x.data());
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut store = ParamStore::<f32>::new();
        let wid = store.insert("w", Tensor::zeros(Shape::new(1, 1, 2, 3))).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, wid);
        let s = g.sigmoid(&w).unwrap();
        let loss = g.sum(&s).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert!(store.grad(wid).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let mut store = ParamStore::new();
        assert!(matches!(g.backward(x, &mut store), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::<f32>::new();
        let wid = store.insert("w", Tensor::full(Shape::scalar(), 3.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let w = g.param(&store, wid);
            let sq = g.square(&w).unwrap();
            let loss = g.sum(&sq).unwrap();
            g.backward(loss, &mut store).unwrap();
        }
        assert_eq!(store.grad(wid), &[12.0]);
        store.zero_grad();
        assert_eq!(store.grad(wid), &[0.0]);
    }

    #[test]
    fn sum_of_squares_gradient_check() {
        let p = random(Shape::new(2, 3, 4, 4), 1);
        let err = grad_check(
            |g, x| {
                let sq = g.square(&x)?;
                g.sum(&sq)
            },
            &p,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn linear_function_gradient_check() {
        let p = random(Shape::new(1, 2, 3, 3), 2);
        let c = random(p.shape(), 3);
        let err = grad_check(
            |g, x| {
                let k = g.constant(c.clone());
                let m = g.mul(&x, &k)?;
                let a = g.affine(&m, 2.5, 1.0)?;
                g.sum(&a)
            },
            &p,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    /// Two conv layers with a sigmoid between them, checked against central
    /// differences with respect to every input, weight and bias entry.
    #[test]
    fn two_layer_conv_net_matches_finite_differences() {
        let x = random(Shape::new(2, 2, 5, 5), 10);
        let w1 = random(Shape::new(3, 2, 3, 3), 11);
        let b1 = random(Shape::new(3, 1, 1, 1), 12);
        let w2 = random(Shape::new(2, 3, 3, 3), 13);
        let b2 = random(Shape::new(2, 1, 1, 1), 14);
        let mut store = ParamStore::<f64>::new();
        let ids = [
            store.insert("w1", w1).unwrap(),
            store.insert("b1", b1).unwrap(),
            store.insert("w2", w2).unwrap(),
            store.insert("b2", b2).unwrap(),
        ];
        let net = |g: &mut Graph<f64>, store: &ParamStore<f64>, x: Var| -> crate::Result<Var> {
            let (w1, b1, w2, b2) = (
                g.param(store, ids[0]),
                g.param(store, ids[1]),
                g.param(store, ids[2]),
                g.param(store, ids[3]),
            );
            let h = g.conv2d(&x, &w1, &b1, 1)?;
            let h = g.sigmoid(&h)?;
            let y = g.conv2d(&h, &w2, &b2, 1)?;
            let sq = g.square(&y)?;
            g.sum(&sq)
        };
        let err = grad_check(|g, v| net(g, &store, v), &x, 1e-3).unwrap();
        assert!(err < 1e-3, "input: {err}");
        for &id in &ids {
            let point = store.value(id).clone();
            let err = grad_check(
                |g, v| {
                    g.bind_param(id, v);
                    let xc = g.constant(x.clone());
                    net(g, &store, xc)
                },
                &point,
                1e-3,
            )
            .unwrap();
            assert!(err < 1e-3, "{}: {err}", store.name(id));
        }
    }

    #[test]
    fn structural_ops_gradient_check() {
        let p = random(Shape::new(1, 4, 4, 4), 20);
        let weights = random(Shape::new(1, 4, 4, 4), 21);
        let index: std::sync::Arc<Vec<u32>> = std::sync::Arc::new((0..64u32).rev().collect());
        let err = grad_check(
            |g, x| {
                let a = g.slice_channels(&x, 1, 2)?;
                let b = g.slice_channels(&x, 0, 1)?;
                let c = g.concat_channels(&[a, b])?;
                let c = g.concat_channels(&[c, b])?;
                let d = g.gather(&c, &index)?;
                let e = g.idwt(&d)?;
                let e = g.dwt(&e)?;
                let e = g.channel_affine(&e, &[1.0, -2.0, 0.5, 3.0], &[0.1, 0.2, 0.3, 0.4])?;
                let r = g.reshape(&e, Shape::new(1, 4, 2, 8))?;
                let r = g.reshape(&r, Shape::new(1, 4, 4, 4))?;
                let k = g.constant(weights.clone());
                let m = g.mul(&r, &k)?;
                let ex = g.exp(&m)?;
                let lr = g.leaky_relu(&m, 0.2)?;
                let s = g.sub(&ex, &lr)?;
                g.mean(&s)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn round_st_passes_gradient_through() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(Shape::new(1, 1, 1, 4), vec![0.2, 1.5, -3.7, 8.0]).unwrap());
        let r = g.round_st(&x).unwrap();
        assert_eq!(g.tensor(r).data(), &[0.0, 2.0, -4.0, 8.0]);
        let s = g.sum(&r).unwrap();
        let grads = g.gradients(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    }
}
