//! Decoupled-weight-decay Adam over named parameter sets.
//!
//! Moments are held in 64-bit precision regardless of the parameter
//! precision, so long runs keep a stable accumulator; decay applies only to
//! entries flagged for it (weight matrices, never bias rows or ordinal
//! thresholds).

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::real::Real;
use super::tensor::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// Optimizer state: first/second moments per trainable entry, step count.
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step_count: u64,
    /// Aligned with the parameter set's entries; `None` for frozen entries.
    pub moments: Vec<Option<(Mat<f64>, Mat<f64>)>>,
}

impl AdamW {
    pub fn new<F: Real>(cfg: AdamWConfig, params: &ParamSet<F>) -> Self {
        let moments = params
            .entries()
            .iter()
            .map(|e| {
                e.trainable
                    .then(|| (Mat::zeros(e.value.rows, e.value.cols), Mat::zeros(e.value.rows, e.value.cols)))
            })
            .collect();
        AdamW { cfg, step_count: 0, moments }
    }

    /// One update. `grads[i]` pairs with `params.entries()[i]`; `None` means
    /// zero gradient (the entry still decays and its moments still damp).
    pub fn step<F: Real>(&mut self, params: &mut ParamSet<F>, grads: &[Option<Mat<F>>]) {
        assert_eq!(grads.len(), params.len(), "gradient list misaligned");
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, e) in params.entries_mut().iter_mut().enumerate() {
            let Some((m, v)) = self.moments[i].as_mut() else { continue };
            let decay = if e.weight_decay { c.lr * c.weight_decay } else { 0.0 };
            for j in 0..e.value.data.len() {
                let g = grads[i].as_ref().map_or(0.0, |gm| gm.data[j].to_f64v());
                m.data[j] = c.beta1 * m.data[j] + (1.0 - c.beta1) * g;
                v.data[j] = c.beta2 * v.data[j] + (1.0 - c.beta2) * g * g;
                let mhat = m.data[j] / bc1;
                let vhat = v.data[j] / bc2;
                let theta = e.value.data[j].to_f64v();
                let updated = theta - c.lr * mhat / (vhat.sqrt() + c.eps) - decay * theta;
                e.value.data[j] = F::from_f64v(updated);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, trainable: bool, decay: bool) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Mat::scalar(value), trainable, decay);
        p
    }

    #[test]
    fn first_step_matches_hand_unrolled_update() {
        // θ0 = 0, g = 1, lr = 1e-3, wd = 0.01:
        // m̂ = 1, v̂ = 1 → θ1 = −1e-3·(1/(1+1e-8)), decay term is zero at θ0 = 0.
        let cfg = AdamWConfig { lr: 1e-3, weight_decay: 0.01, ..AdamWConfig::default() };
        let mut p = one_param(0.0, true, true);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[Some(Mat::scalar(1.0))]);
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().value.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut p = one_param(1.25, true, true);
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..3 {
            opt.step(&mut p, &[None]);
        }
        assert_eq!(p.get("w").unwrap().value.item(), 1.25);
    }

    #[test]
    fn pure_decay_shrinks_by_factor() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..AdamWConfig::default() };
        let mut p = one_param(2.0, true, true);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[None]);
        assert!((p.get("w").unwrap().value.item() - 2.0 * (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn decay_excluded_entries_do_not_shrink() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..AdamWConfig::default() };
        let mut p = one_param(2.0, true, false);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[None]);
        assert_eq!(p.get("w").unwrap().value.item(), 2.0);
    }

    #[test]
    fn frozen_entries_never_move() {
        let cfg = AdamWConfig::default();
        let mut p = one_param(3.5, false, true);
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &[Some(Mat::scalar(10.0))]);
        assert_eq!(p.get("w").unwrap().value.item(), 3.5);
    }

    #[test]
    fn two_steps_match_explicit_recurrence() {
        let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut p = one_param(0.5, true, true);
        let mut opt = AdamW::new(cfg, &p);
        let (g1, g2) = (0.3, -0.7);

        let mut m = 0.0;
        let mut v = 0.0;
        let mut theta = 0.5f64;
        for (t, g) in [(1, g1), (2, g2)] {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.01 * mhat / (vhat.sqrt() + 1e-8);
        }

        opt.step(&mut p, &[Some(Mat::scalar(g1))]);
        opt.step(&mut p, &[Some(Mat::scalar(g2))]);
        assert!((p.get("w").unwrap().value.item() - theta).abs() < 1e-14);
    }
}
