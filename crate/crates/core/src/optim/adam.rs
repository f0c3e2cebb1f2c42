use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Restores a saved state.
    pub fn from_state(beta1: f64, beta2: f64, eps: f64, m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::InvalidArgument("Adam moment lengths differ".into()));
        }
        Ok(Self {
            beta1,
            beta2,
            eps,
            m,
            v,
            t,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter length mismatch");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Exponentially decaying learning rate from `start` at `t = 0` to `end` at
/// `t = iterations - 1`.
pub fn lr_schedule(t: usize, iterations: usize, start: f64, end: f64) -> f64 {
    if iterations <= 1 {
        return start;
    }
    start * (end / start).powf(t as f64 / (iterations - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_schedule(0, 10000, 0.3, 0.1), 0.3);
        assert!((lr_schedule(9999, 10000, 0.3, 0.1) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(50, 101, 0.3, 0.1) - (0.03f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -2.0];
        a.step(&mut p, &[0.5, 0.5], 0.1);
        let (m0, v0) = (a.moments().0[0], a.moments().1[0]);
        let before = p.clone();
        a.step(&mut p, &[0.0, 0.0], 0.0);
        assert_eq!(p, before);
        assert_eq!(a.moments().0[0], 0.9 * m0);
        assert_eq!(a.moments().1[0], 0.999 * v0);
    }

    #[test]
    fn first_step_has_lr_magnitude() {
        let mut a = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        a.step(&mut p, &[3.7], 0.01);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        // f = (x - 1)^2 + 10 (y + 2)^2 with a decaying rate.
        let mut a = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0, 0.0];
        let iters = 2000;
        for t in 0..iters {
            let g = [2.0 * (p[0] - 1.0), 20.0 * (p[1] + 2.0)];
            a.step(&mut p, &g, lr_schedule(t, iters, 0.1, 1e-5));
        }
        assert!((p[0] - 1.0).abs() < 1e-6 && (p[1] + 2.0).abs() < 1e-6, "{p:?}");
    }
}
