//! Adam with a constant learning rate.

use serde::{Deserialize, Serialize};

use crate::params::Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(lr: f64, like: &Params) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.0.iter_mut().zip(&grads.0).zip(&mut self.m.0).zip(&mut self.v.0) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// Plain gradient descent: `params -= lr * grads`.
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64) {
    params.axpy(-lr, grads);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, ArrayD};

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Params(vec![arr1(&[1.0, -1.0]).into_dyn()]);
        let g = Params(vec![arr1(&[0.5, -3.0]).into_dyn()]);
        let mut adam = Adam::new(0.1, &p);
        adam.update(&mut p, &g);
        // bias-corrected first step is lr * sign(g)
        assert!((p.0[0][[0]] - 0.9).abs() < 1e-6);
        assert!((p.0[0][[1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = Params(vec![ArrayD::from_elem(ndarray::IxDyn(&[3]), 5.0)]);
        let mut adam = Adam::new(0.05, &p);
        for _ in 0..2000 {
            let g = p.clone();
            adam.update(&mut p, &g);
        }
        assert!(p.0[0].iter().all(|v| v.abs() < 1e-2));
    }
}
