use serde::{Deserialize, Serialize};

use crate::diffcore::{Element, Ops, ParamStore};
use crate::error::{config_err, Result};
use crate::inn::subnet::Subnet;
use crate::keying::{decode_with, encode_with, BlockKey};

/// `w_i = r^i`, the weight on block `i`'s secret→host transfer.
pub fn decay_weight(i: usize, r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(config_err!("decay rate must lie in (0, 1], got {r}"));
    }
    Ok(r.powi(i as i32))
}

/// Map applied to `g`'s output before `exp`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum ScaleMode {
    /// Logistic sigmoid; the multiplier lies in (1, e).
    #[default]
    Sigmoid,
    /// `alpha·(2·sigmoid − 1)`; the multiplier lies in (e^−alpha, e^alpha).
    Centered { alpha: f64 },
}


impl ScaleMode {
    fn apply<T: Element, O: Ops<T>>(self, ops: &mut O, g: &O::Value) -> Result<O::Value> {
        let s = ops.sigmoid(g)?;
        match self {
            Self::Sigmoid => Ok(s),
            Self::Centered { alpha } => {
                ops.affine(&s, T::from_f64_lossy(2.0 * alpha), T::from_f64_lossy(-alpha))
            }
        }
    }
}

/// One key-conditioned coupling block.
///
/// Forward, with `x_k = E(x_s, k)`:
///
/// ```text
/// x_h' = x_h + w·f(x_k)
/// x_s' = x_k ⊙ exp(σ(g(x_h'))) + h(x_h')
/// ```
///
/// Inverse:
///
/// ```text
/// x_k = (x_s' − h(x_h')) ⊙ exp(−σ(g(x_h')))
/// x_h = x_h' − w·f(x_k)
/// x_s = E⁻¹(x_k, k)
/// ```
#[derive(Clone, Debug)]
pub struct KeyedBlock {
    pub(crate) index: usize,
    pub(crate) f: Subnet,
    pub(crate) g: Subnet,
    pub(crate) h: Subnet,
}

impl KeyedBlock {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn subnets(&self) -> [&Subnet; 3] {
        [&self.f, &self.g, &self.h]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        store: &ParamStore<T>,
        x_h: &O::Value,
        x_s: &O::Value,
        key: Option<&BlockKey>,
        weight: T,
        scale: ScaleMode,
    ) -> Result<(O::Value, O::Value)> {
        let x_k = match key {
            Some(k) => encode_with(ops, x_s, k)?,
            None => x_s.clone(),
        };
        let transfer = self.f.forward(ops, store, &x_k)?;
        let transfer = if weight == T::one() {
            transfer
        } else {
            ops.scale(&transfer, weight)?
        };
        let host = ops.add(x_h, &transfer)?;
        let g = self.g.forward(ops, store, &host)?;
        let s = scale.apply(ops, &g)?;
        let e = ops.exp(&s)?;
        let scaled = ops.mul(&x_k, &e)?;
        let shift = self.h.forward(ops, store, &host)?;
        let secret = ops.add(&scaled, &shift)?;
        Ok((host, secret))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn inverse<T: Element, O: Ops<T>>(
        &self,
        ops: &mut O,
        store: &ParamStore<T>,
        x_h: &O::Value,
        x_s: &O::Value,
        key: Option<&BlockKey>,
        weight: T,
        scale: ScaleMode,
    ) -> Result<(O::Value, O::Value)> {
        let g = self.g.forward(ops, store, x_h)?;
        let s = scale.apply(ops, &g)?;
        let neg = ops.scale(&s, -T::one())?;
        let e = ops.exp(&neg)?;
        let shift = self.h.forward(ops, store, x_h)?;
        let centred = ops.sub(x_s, &shift)?;
        let x_k = ops.mul(&centred, &e)?;
        let transfer = self.f.forward(ops, store, &x_k)?;
        let transfer = if weight == T::one() {
            transfer
        } else {
            ops.scale(&transfer, weight)?
        };
        let host = ops.sub(x_h, &transfer)?;
        let secret = match key {
            Some(k) => decode_with(ops, &x_k, k)?,
            None => x_k,
        };
        Ok((host, secret))
    }
}
