use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam parameters {self:?}")))
        }
    }
}

/// Parameters being optimized plus Adam's moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamParams,
}

impl AdamState {
    pub fn new(params: Vec<f64>, hyper: AdamParams) -> Self {
        let n = params.len();
        AdamState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            hyper,
        }
    }

    /// Starts over at `params` but keeps the current moments and step count.
    pub fn reset_params(&mut self, params: Vec<f64>) {
        debug_assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    /// One bias-corrected Adam update, descending along `grad`.
    pub fn step(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::shape(
                format!("gradient of length {}", self.params.len()),
                grad.len(),
            ));
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient entry {bad}")));
        }
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, m), v), g) in self
            .params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, grad: &[f64]) -> Result<AdamState> {
    let mut next = state.clone();
    next.step(grad)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let s = AdamState::new(vec![1.0, -2.0], AdamParams::default());
        let next = adam_step(&s, &[0.0, 0.0]).unwrap();
        assert_eq!(next.params, s.params);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε)
        let s = AdamState::new(vec![0.0], AdamParams::default());
        let next = adam_step(&s, &[2.0]).unwrap();
        let expected = -0.05 * 2.0 / (2.0 + 1e-8);
        assert!((next.params[0] - expected).abs() < 1e-15);
        assert!((next.params[0] + 0.05).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let s = AdamState::new(vec![0.3, 0.1], AdamParams::default());
        assert_eq!(
            adam_step(&s, &[0.2, -1.0]).unwrap(),
            adam_step(&s, &[0.2, -1.0]).unwrap()
        );
    }

    #[test]
    fn rejects_bad_gradients() {
        let s = AdamState::new(vec![0.0; 2], AdamParams::default());
        assert!(matches!(
            adam_step(&s, &[f64::NAN, 0.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(adam_step(&s, &[0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = AdamState::new(
            vec![3.0, -2.0],
            AdamParams {
                lr: 0.1,
                ..Default::default()
            },
        );
        for _ in 0..2000 {
            let g: Vec<f64> = s.params.iter().map(|p| 2.0 * p).collect();
            s.step(&g).unwrap();
        }
        assert!(s.params.iter().all(|p| p.abs() < 1e-3));
        assert!(s.v.iter().all(|v| *v >= 0.0));
    }
}
