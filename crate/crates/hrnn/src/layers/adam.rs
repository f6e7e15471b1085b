//! Adam with bias correction. Moments mirror the parameter set name-for-name
//! and update in sorted name order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::params::{GradMap, ParamSet};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<F: Real> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: BTreeMap<String, Vec<F>>,
    pub v: BTreeMap<String, Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamSet<F>, hyper: AdamHyper) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, p) in params.iter() {
            m.insert(name.clone(), vec![F::zero(); p.values.len()]);
            v.insert(name.clone(), vec![F::zero(); p.values.len()]);
        }
        AdamState { hyper, t: 0, m, v }
    }

    /// One update over every parameter; a missing gradient entry counts as
    /// zero (the moments still decay). `t` increments exactly once per call.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &GradMap<F>) -> Result<()> {
        self.t += 1;
        let b1 = F::from_f64(self.hyper.beta1);
        let b2 = F::from_f64(self.hyper.beta2);
        let lr = F::from_f64(self.hyper.lr);
        let eps = F::from_f64(self.hyper.eps);
        let bc1 = F::one() - F::from_f64(self.hyper.beta1.powi(self.t as i32));
        let bc2 = F::one() - F::from_f64(self.hyper.beta2.powi(self.t as i32));

        for (name, p) in params.iter_mut() {
            let g = grads.get(name);
            if let Some(g) = g {
                if g.len() != p.values.len() {
                    return Err(Error::Config(format!(
                        "gradient for {name} has {} values, parameter has {}",
                        g.len(),
                        p.values.len()
                    )));
                }
            }
            let m = self.m.get_mut(name).expect("moment mirrors params");
            let v = self.v.get_mut(name).expect("moment mirrors params");
            for i in 0..p.values.len() {
                let gi = g.map_or(F::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (F::one() - b1) * gi;
                v[i] = b2 * v[i] + (F::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] = p.values[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
