//! Binary boundary losses: cross-entropy, class re-weighted cross-entropy
//! and focal loss.
//!
//! All losses take the class-1 (end-of-segment) probability `p` and clamp it
//! into `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Cross-entropy: `-log p` for a boundary, `-log(1-p)` otherwise.
pub fn ce_loss(p: f64, y: u8) -> f64 {
    let p = clamp(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn weighted_ce_loss(p: f64, y: u8, w0: f64, w1: f64) -> Result<f64> {
    check_unit("w0", w0)?;
    check_unit("w1", w1)?;
    Ok(if y == 1 { w1 } else { w0 } * ce_loss(p, y))
}

pub fn focal_loss(p: f64, y: u8, alpha: f64, gamma: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    check_gamma(gamma)?;
    let p = clamp(p);
    Ok(if y == 1 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    })
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")))
    }
}

/// Training objective with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawLoss")]
pub enum LossSpec {
    #[default]
    Ce,
    WeightedCe {
        w0: f64,
        w1: f64,
    },
    Focal {
        alpha: f64,
        gamma: f64,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    kind: String,
    w0: Option<f64>,
    w1: Option<f64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
}

impl TryFrom<RawLoss> for LossSpec {
    type Error = String;

    fn try_from(r: RawLoss) -> std::result::Result<Self, String> {
        let need = |v: Option<f64>, f: &str| v.ok_or_else(|| format!("loss `{}` needs `{f}`", r.kind));
        let spec = match r.kind.as_str() {
            "ce" => LossSpec::Ce,
            "weighted_ce" => LossSpec::WeightedCe {
                w0: need(r.w0, "w0")?,
                w1: need(r.w1, "w1")?,
            },
            "focal" => LossSpec::Focal {
                alpha: need(r.alpha, "alpha")?,
                gamma: need(r.gamma, "gamma")?,
            },
            k => return Err(format!("unknown loss kind `{k}`")),
        };
        let given = [r.w0, r.w1, r.alpha, r.gamma].iter().filter(|v| v.is_some()).count();
        let expected = match spec {
            LossSpec::Ce => 0,
            _ => 2,
        };
        if given != expected {
            return Err(format!("loss `{}` given parameters it does not take", r.kind));
        }
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl LossSpec {
    /// Re-weighted cross-entropy with boundary weight 0.8 and 0.2 for the rest.
    pub const WEIGHTED_DEFAULT: LossSpec = LossSpec::WeightedCe { w0: 0.2, w1: 0.8 };
    pub const FOCAL_DEFAULT: LossSpec = LossSpec::Focal { alpha: 0.8, gamma: 2.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Ce => Ok(()),
            LossSpec::WeightedCe { w0, w1 } => {
                check_unit("w0", w0)?;
                check_unit("w1", w1)
            }
            LossSpec::Focal { alpha, gamma } => {
                check_unit("alpha", alpha)?;
                check_gamma(gamma)
            }
        }
    }

    pub fn loss(&self, p: f64, y: u8) -> Result<f64> {
        match *self {
            LossSpec::Ce => Ok(ce_loss(p, y)),
            LossSpec::WeightedCe { w0, w1 } => weighted_ce_loss(p, y, w0, w1),
            LossSpec::Focal { alpha, gamma } => focal_loss(p, y, alpha, gamma),
        }
    }

    /// Loss and its derivative with respect to `p`. The derivative is zero
    /// where the clamp is active. Parameters must already be validated.
    pub fn value_and_grad(&self, p: f64, y: u8) -> (f64, f64) {
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
        let q = clamp(p);
        let (v, d) = match *self {
            LossSpec::Ce => ce_grad(q, y, 1.0, 1.0),
            LossSpec::WeightedCe { w0, w1 } => ce_grad(q, y, w0, w1),
            LossSpec::Focal { alpha, gamma } => focal_grad(q, y, alpha, gamma),
        };
        (v, if clamped { 0.0 } else { d })
    }

    /// Short label used in result tables, e.g. `focal(0.8,2)`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Ce => write!(f, "ce"),
            LossSpec::WeightedCe { w0, w1 } => write!(f, "weighted_ce({w0},{w1})"),
            LossSpec::Focal { alpha, gamma } => write!(f, "focal({alpha},{gamma})"),
        }
    }
}

fn ce_grad(p: f64, y: u8, w0: f64, w1: f64) -> (f64, f64) {
    if y == 1 {
        (-w1 * p.ln(), -w1 / p)
    } else {
        (-w0 * (1.0 - p).ln(), w0 / (1.0 - p))
    }
}

fn focal_grad(p: f64, y: u8, alpha: f64, gamma: f64) -> (f64, f64) {
    if y == 1 {
        let q = 1.0 - p;
        let lp = p.ln();
        let mod_ = q.powf(gamma);
        let dmod = if gamma == 0.0 {
            0.0
        } else {
            -gamma * q.powf(gamma - 1.0)
        };
        (-alpha * mod_ * lp, -alpha * (dmod * lp + mod_ / p))
    } else {
        let lq = (1.0 - p).ln();
        let mod_ = p.powf(gamma);
        let dmod = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
        let a = 1.0 - alpha;
        (-a * mod_ * lq, -a * (dmod * lq - mod_ / (1.0 - p)))
    }
}

/// Arithmetic mean of per-example losses.
pub fn batch_loss(probs: &[f64], labels: &[u8], spec: &LossSpec) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("batch_loss: empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "batch_loss: {} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    spec.validate()?;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        total += spec.loss(p, y)?;
    }
    Ok(total / probs.len() as f64)
}
