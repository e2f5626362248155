use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update, in place. Parameters with no entry in
/// `grads` are treated as having a zero gradient.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                kernel: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - f64::from(cfg.beta1).powi(t);
    let bc2 = 1.0 - f64::from(cfg.beta2).powi(t);
    for (name, p) in params.iter_mut() {
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        if m.shape() != p.shape() {
            return Err(Error::Shape {
                kernel: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: m.shape().to_vec(),
            });
        }
        let g = grads.get(name);
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = f64::from(md[i]) / bc1;
            let v_hat = f64::from(vd[i]) / bc2;
            pd[i] -= (f64::from(cfg.lr) * m_hat / (v_hat.sqrt() + f64::from(cfg.eps))) as f32;
        }
    }
    Ok(())
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f32) -> f32 {
    let norm = grads.values().map(Tensor::sum_squares).sum::<f64>().sqrt() as f32;
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f32) -> (ParamStore, Gradients) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(0.0));
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::scalar(value));
        (p, g)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, g) = single(1.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        let delta = p.get("w").unwrap().item();
        assert!((delta + 0.1).abs() < 1e-6, "{delta}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, g) = single(0.0);
        let before = p.clone();
        adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (mut p, g) = single(1.0);
        let cfg = AdamConfig::with_lr(0.1);
        let mut st = AdamState::new();
        // hand-unrolled with g = 1: m_t = 1-b1^t and v_t = 1-b2^t, parameter
        // stored as f32 after every step
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.1f64, 1e-8f64);
        let (mut m, mut v, mut expect) = (0.0f64, 0.0f64, 0.0f32);
        for k in 1..=2 {
            let before = p.get("w").unwrap().item();
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            let delta = f64::from(p.get("w").unwrap().item()) - f64::from(before);
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let step = -lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
            let next = (f64::from(expect) + step) as f32;
            let expect_delta = f64::from(next) - f64::from(expect);
            expect = next;
            assert!(
                (delta - expect_delta).abs() < 1e-8,
                "step {k}: {delta} vs {expect_delta}"
            );
        }
    }

    #[test]
    fn shape_mismatch_and_bad_hyperparameters() {
        let (mut p, _) = single(1.0);
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::zeros(&[2]));
        assert!(adam_step(&mut p, &g, &mut AdamState::new(), &AdamConfig::with_lr(0.1)).is_err());
        let (mut p, g) = single(1.0);
        let mut bad = AdamConfig::with_lr(0.1);
        bad.beta1 = 1.0;
        assert!(adam_step(&mut p, &g, &mut AdamState::new(), &bad).is_err());
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = Gradients::new();
        g.insert("a".into(), Tensor::vector(vec![3.0, 4.0]).unwrap());
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-6);
        let after = g["a"].sum_squares().sqrt();
        assert!((after - 1.0).abs() < 1e-6);
    }
}
