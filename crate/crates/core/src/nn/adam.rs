use super::Tensors;
use crate::error::{Error, Result};

/// Bias-corrected Adam. [`Adam::step`] descends along `grads`; pass negated
/// ascent gradients to maximize an objective.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Tensors + ?Sized,
        G: Tensors + ?Sized,
    {
        let gs = grads.tensors();
        for (i, g) in gs.iter().enumerate() {
            if let Some(k) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    detail: format!("tensor {i}, coordinate {k}: {}", g[k]),
                });
            }
        }
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        let shapes_match = self.m.len() == gs.len()
            && self.m.iter().zip(&gs).all(|(m, g)| m.len() == g.len());
        if !shapes_match {
            return Err(Error::dim("gradient layout differs from optimizer state"));
        }
        let mut ps = params.tensors_mut();
        if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::dim("gradient layout differs from parameters"));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in ps
            .iter_mut()
            .zip(&gs)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
