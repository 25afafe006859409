//! AdamW over a flat parameter vector. Hyperparameters default to the
//! masked-autoencoder recipe (beta2 = 0.95, weight decay 0.05).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n_params: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer state sized for {} parameters, got {} / {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical("non-finite gradient".to_string()));
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut opt = AdamW::new(3);
        let mut p = vec![1.0, -2.0, 3.0];
        let orig = p.clone();
        opt.step(&mut p, &[0.5, 0.1, -0.3], 0.0).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut opt = AdamW::new(1);
        opt.weight_decay = 0.0;
        let mut p = vec![2.0];
        for _ in 0..200 {
            let g = 2.0 * p[0];
            opt.step(&mut p, &[g], 0.05).unwrap();
        }
        assert!(p[0].abs() < 0.05, "param {}", p[0]);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = AdamW::new(1);
        let mut p = vec![1.0];
        assert!(opt.step(&mut p, &[f64::NAN], 0.1).is_err());
        assert_eq!(p, vec![1.0]);
    }
}
