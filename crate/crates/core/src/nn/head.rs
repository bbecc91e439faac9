use rand::Rng;

use super::matrix::{dot, sigmoid};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Logistic output layer over the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Vec<f64>,
    pub b: f64,
}

/// Forward result of the head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    /// `w·h + b`
    pub logit: f64,
    /// Clamped probability of the positive (bullying) class.
    pub p: f64,
    /// True when the clamp changed the probability.
    pub clamped: bool,
}

impl HeadParams {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w: vec![0.0; hidden],
            b: 0.0,
        }
    }

    pub fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w: (0..hidden).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: 0.0,
        }
    }
}

pub fn head_forward(head: &HeadParams, h: &[f64]) -> HeadOutput {
    debug_assert_eq!(head.w.len(), h.len());
    let logit = dot(&head.w, h) + head.b;
    let raw = sigmoid(logit);
    let p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    HeadOutput {
        logit,
        p,
        clamped: p != raw,
    }
}

/// `∂loss/∂logit` from `∂loss/∂p`, using the unclamped sigmoid slope so that
/// saturated wrong predictions still receive a gradient.
pub fn logit_grad(out: &HeadOutput, dloss_dp: f64) -> f64 {
    let s = sigmoid(out.logit);
    dloss_dp * s * (1.0 - s)
}

/// Returns `(∂loss/∂w, ∂loss/∂b, ∂loss/∂h)` for a given `∂loss/∂logit`.
pub fn head_backward(head: &HeadParams, h: &[f64], d_logit: f64) -> (Vec<f64>, f64, Vec<f64>) {
    let dw = h.iter().map(|v| v * d_logit).collect();
    let dh = head.w.iter().map(|v| v * d_logit).collect();
    (dw, d_logit, dh)
}

/// Binary cross-entropy `-[y ln p + (1-y) ln(1-p)]` and its derivative in `p`.
pub fn bce_loss(p: f64, y: f64) -> (f64, f64) {
    let loss = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let dp = -(y / p) + (1.0 - y) / (1.0 - p);
    (loss.max(0.0), dp)
}
