use crate::diffcore::graph::{Graph, Var};
use crate::diffcore::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Largest entry-wise relative error between the tape gradient of `f` at
/// `point` and central differences with step `eps`:
/// `|analytic − numeric| / (|numeric| + 1e-8)`.
///
/// `f` must build a scalar from the leaf it is given. Run this in `f64`;
/// in `f32` the differences are dominated by rounding.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let y = f(&mut g, x)?;
    let analytic = g
        .gradients(y)?
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |data: Vec<T>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(point.shape(), data)?);
        let y = f(&mut g, x)?;
        g.tensor(y)
            .item()
            .map(Element::as_f64)
            .ok_or_else(|| Error::Contract("grad_check needs a scalar function".into()))
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.to_vec();
        let mut minus = point.to_vec();
        plus[i] = T::from_f64_lossy(plus[i].as_f64() + eps);
        minus[i] = T::from_f64_lossy(minus[i].as_f64() - eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i].as_f64();
        worst = worst.max((a - numeric).abs() / (numeric.abs() + 1e-8));
    }
    Ok(worst)
}
