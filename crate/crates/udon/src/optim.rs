//! Adam optimizer over the flat parameter list.
//!
//! Moment state and the bias-correction step count are kept per parameter
//! tensor, so heads that are only touched when their domain is sampled see a
//! consistent update schedule. Parameters absent from a step's graph are not
//! updated at all.

use crate::model::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct Slot<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

pub struct Adam<S> {
    cfg: AdamConfig,
    slots: Vec<Slot<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        let slots = sizes
            .iter()
            .map(|&n| Slot { m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0 })
            .collect();
        Adam { cfg, slots }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// Applies one Adam update to a single parameter tensor.
    pub fn step(&mut self, slot: usize, param: &mut Matrix<S>, grad: &[S]) {
        assert_eq!(param.len(), grad.len(), "gradient size mismatch for slot {slot}");
        let s = &mut self.slots[slot];
        s.t += 1;
        let b1 = S::from_f64_c(self.cfg.beta1);
        let b2 = S::from_f64_c(self.cfg.beta2);
        let lr = S::from_f64_c(self.cfg.lr);
        let eps = S::from_f64_c(self.cfg.eps);
        let one = S::one();
        let bc1 = one - S::from_f64_c(self.cfg.beta1.powi(s.t as i32));
        let bc2 = one - S::from_f64_c(self.cfg.beta2.powi(s.t as i32));
        for i in 0..grad.len() {
            let g = grad[i];
            s.m[i] = b1 * s.m[i] + (one - b1) * g;
            s.v[i] = b2 * s.v[i] + (one - b2) * g * g;
            let m_hat = s.m[i] / bc1;
            let v_hat = s.v[i] / bc2;
            param.data[i] = param.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        let mut p = Matrix { rows: 1, cols: 2, data: vec![1.0f64, -1.0] };
        adam.step(0, &mut p, &[0.5, -0.25]);
        // First Adam step magnitude is ~lr regardless of gradient scale.
        assert_abs_diff_eq!(p.data[0], 1.0 - 1e-3, epsilon = 1e-7);
        assert_abs_diff_eq!(p.data[1], -1.0 + 1e-3, epsilon = 1e-7);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &[1]);
        let mut p = Matrix { rows: 1, cols: 1, data: vec![3.0f64] };
        for _ in 0..2000 {
            let g = 2.0 * (p.data[0] - 1.25);
            adam.step(0, &mut p, &[g]);
        }
        assert_abs_diff_eq!(p.data[0], 1.25, epsilon = 1e-3);
    }

    #[test]
    fn untouched_slots_keep_their_state() {
        let mut adam = Adam::new(AdamConfig::default(), &[1, 1]);
        let mut a = Matrix { rows: 1, cols: 1, data: vec![0.0f64] };
        let b = Matrix { rows: 1, cols: 1, data: vec![5.0f64] };
        for _ in 0..10 {
            adam.step(0, &mut a, &[1.0]);
        }
        // Slot 1 was never stepped.
        assert_eq!(adam.slots[1].t, 0);
        assert_eq!(b.data[0], 5.0);
    }
}
