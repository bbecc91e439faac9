//! Global-norm gradient clipping and the Adam optimizer.

use super::model::ParamSet;
use super::NnError;

/// Scales all gradients by `max_norm / norm` when their global L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<P: ParamSet + ?Sized>(grads: &mut P, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

pub fn global_norm<P: ParamSet + ?Sized>(p: &P) -> f64 {
    p.tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let shapes: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            v: shapes.clone(),
            m: shapes,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    let gs = grads.tensors();
    let mut ps = params.tensors_mut();
    let shapes_ok = ps.len() == gs.len()
        && ps.len() == state.m.len()
        && ps
            .iter()
            .zip(&gs)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(NnError::Contract(
            "parameter, gradient and optimizer state shapes disagree".into(),
        ));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (k, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
