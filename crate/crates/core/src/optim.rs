//! Adam with bias correction, plus global-norm gradient clipping.

use crate::autodiff::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamStore) {
        if self.first_moment.len() != params.len() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let g = p.grad.data();
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        params.zero_grads();
    }
}

/// Rescales all gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= factor;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(vec![1], vec![x]).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        store.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
        let mut adam = Adam::new(0.001);
        adam.step(&mut store);
        let x = store.iter().next().unwrap().value.data()[0];
        assert!((x + 0.001).abs() < 1e-10, "{x}");
        assert_eq!(store.iter().next().unwrap().grad.data()[0], 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_keeps_value_and_decays_moments() {
        let mut store = scalar_store(2.0);
        let mut adam = Adam::new(0.01);
        store.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
        adam.step(&mut store);
        let before = store.iter().next().unwrap().value.data()[0];
        let m_before = adam.first_moments()[0].data()[0];
        let v_before = adam.second_moments()[0].data()[0];
        adam.step(&mut store);
        let after = store.iter().next().unwrap().value.data()[0];
        // m stays nonzero, so the value keeps moving; with m=0 it would not.
        assert!(adam.first_moments()[0].data()[0] < m_before);
        assert!(adam.second_moments()[0].data()[0] < v_before);
        assert!(after < before);

        let mut fresh = scalar_store(2.0);
        let mut adam = Adam::new(0.01);
        adam.step(&mut fresh);
        assert_eq!(fresh.iter().next().unwrap().value.data()[0], 2.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2]));
        store.get_mut(id).grad = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let norm = clip_grad_norm(&mut store, 1.0);
        assert_eq!(norm, 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
