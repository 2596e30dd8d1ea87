use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Element, Ops, ParamId, ParamStore, Shape, Tensor};
use crate::error::Result;

const KERNEL: usize = 3;
const SLOPE: f64 = 0.2;

/// How a subnet's parameters are initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He-normal hidden layers, zero output layer: every block starts as a
    /// fixed scaling of the secret pipeline and leaves the host untouched.
    Standard,
    /// Every parameter zero.
    Zero,
    /// Every layer random, including the output layer. Used to exercise
    /// invertibility away from the identity.
    Random { output_std: f64 },
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
}

/// A chain of 3×3 same-padded convolutions with leaky ReLU (slope 0.2)
/// between them. Coupling blocks use three layers.
#[derive(Clone, Debug)]
pub struct Subnet {
    layers: Vec<ConvLayer>,
}

impl Subnet {
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        prefix: &str,
        widths: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len().saturating_sub(1));
        for (j, pair) in widths.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let last = j == widths.len() - 2;
            let fan_in = (cin * KERNEL * KERNEL) as f64;
            let std = match (init, last) {
                (Init::Zero, _) | (Init::Standard, true) => 0.0,
                (Init::Random { output_std }, true) => output_std,
                _ => (2.0 / ((1.0 + SLOPE * SLOPE) * fan_in)).sqrt(),
            };
            let shape = Shape::new(cout, cin, KERNEL, KERNEL);
            let weight = if std > 0.0 {
                let normal = Normal::new(0.0, std).expect("valid std");
                Tensor::from_fn(shape, |_, _, _, _| normal.sample(rng) as f32)
            } else {
                Tensor::zeros(shape)
            };
            let bias = match (init, last) {
                (Init::Random { output_std }, true) => {
                    let normal = Normal::new(0.0, output_std).expect("valid std");
                    Tensor::from_fn(Shape::new(cout, 1, 1, 1), |_, _, _, _| normal.sample(rng) as f32)
                }
                _ => Tensor::zeros(Shape::new(cout, 1, 1, 1)),
            };
            layers.push(ConvLayer {
                weight: store.insert(format!("{prefix}.conv{j}.weight"), weight)?,
                bias: store.insert(format!("{prefix}.conv{j}.bias"), bias)?,
            });
        }
        Ok(Self { layers })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }

    pub fn forward<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        store: &ParamStore<T>,
        x: &O::Value,
    ) -> Result<O::Value> {
        let slope = T::from_f64_lossy(SLOPE);
        let mut h = x.clone();
        for (j, layer) in self.layers.iter().enumerate() {
            let w = ops.param(store, layer.weight);
            let b = ops.param(store, layer.bias);
            h = ops.conv2d(&h, &w, &b, KERNEL / 2)?;
            if j + 1 < self.layers.len() {
                h = ops.leaky_relu(&h, slope)?;
            }
        }
        Ok(h)
    }
}
