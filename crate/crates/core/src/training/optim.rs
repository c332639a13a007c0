use crate::tensor::{Array, ParamStore};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Adam with a constant learning rate and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.is_empty() {
            self.m = store.ids().map(|id| Array::zeros(store.value(id).shape())).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        if self.lr == 0.0 {
            return;
        }
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store
        .ids()
        .map(|id| store.grad(id).data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Array::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        s.add("b", Array::new(vec![1], vec![4.0]).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut s = store();
        let a = s.find("a").unwrap();
        s.grad_mut(a).data_mut().copy_from_slice(&[0.3, -7.0, 0.0]);
        let mut opt = Adam::new(0.01);
        opt.step(&mut s);
        let got = s.value(a).data();
        assert!((got[0] - 0.99).abs() < 1e-9);
        assert!((got[1] + 1.99).abs() < 1e-9);
        assert_eq!(got[2], 0.5);
    }

    #[test]
    fn zero_gradients_and_zero_rate_leave_values() {
        let mut s = store();
        let before = s.clone();
        Adam::new(0.1).step(&mut s);
        for id in s.ids() {
            assert_eq!(s.value(id), before.value(id));
        }
        let b = s.find("b").unwrap();
        s.grad_mut(b).fill(3.0);
        Adam::new(0.0).step(&mut s);
        assert_eq!(s.value(b), before.value(b));
    }

    #[test]
    fn clipping() {
        let mut s = store();
        let (a, b) = (s.find("a").unwrap(), s.find("b").unwrap());
        s.grad_mut(a).data_mut().copy_from_slice(&[3.0, 0.0, 0.0]);
        s.grad_mut(b).data_mut()[0] = 4.0;
        assert_eq!(clip_grad_norm(&mut s, 10.0), 5.0);
        assert_eq!(s.grad(b).data()[0], 4.0);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.grad(a).data()[0] - 0.6).abs() < 1e-15);
        assert!((s.grad(b).data()[0] - 0.8).abs() < 1e-15);
    }
}
