use crate::diffcore::ParamStore;

/// Adam with bias correction. Moments live here, parameters and gradients in
/// the store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.value(id).len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently in `store`.
    pub fn step(&mut self, store: &mut ParamStore<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for i in 0..value.len() {
                let g = grad[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                value[i] = (value[i] as f64 - update) as f32;
            }
        }
        store.bump_step();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Shape, Tensor};

    fn scalar_store(v: f32) -> (ParamStore<f32>, crate::diffcore::ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("x", Tensor::full(Shape::new(1, 1, 1, 1), v)).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0f32, -0.02] {
            let (mut s, id) = scalar_store(1.0);
            s.accumulate_grad(id, &[g]).unwrap();
            let mut adam = Adam::new(&s, 0.9, 0.99, 1e-8);
            adam.step(&mut s, 0.01);
            let moved = s.value(id).data()[0] - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-6, "{moved}");
            assert_eq!(s.step(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut s, id) = scalar_store(0.5);
        let mut adam = Adam::new(&s, 0.9, 0.99, 1e-8);
        adam.step(&mut s, 0.1);
        assert_eq!(s.value(id).data()[0], 0.5);
    }

    #[test]
    fn steps_reduce_a_quadratic() {
        let (mut s, id) = scalar_store(2.0);
        let mut adam = Adam::new(&s, 0.9, 0.99, 1e-8);
        let loss = |x: f32| (x - 0.5).powi(2);
        let mut last = loss(2.0);
        for _ in 0..2 {
            let x = s.value(id).data()[0];
            s.zero_grad();
            s.accumulate_grad(id, &[2.0 * (x - 0.5)]).unwrap();
            adam.step(&mut s, 0.1);
            let now = loss(s.value(id).data()[0]);
            assert!(now < last);
            last = now;
        }
    }
}
