//! Single-layer unidirectional LSTM with exact backpropagation through time.

use rand::Rng;

use super::matrix::{sigmoid, Matrix};
use super::NnError;

/// Gate order used for parameter storage and serialization.
pub const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];
const I: usize = 0;
const F: usize = 1;
const O: usize = 2;
const G: usize = 3;

/// `z = W x + U h + b` for one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    /// hidden × input
    pub w: Matrix,
    /// hidden × hidden
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(hidden, input_dim),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub gates: [Gate; 4],
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            gates: std::array::from_fn(|_| Gate::zeros(input_dim, hidden)),
        }
    }

    /// Uniform `±1/√fan_in` weights per matrix, zero biases except the forget
    /// gate, which starts at 1.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        for (k, gate) in p.gates.iter_mut().enumerate() {
            gate.w = Matrix::uniform(hidden, input_dim, 1.0 / (input_dim as f64).sqrt(), rng);
            gate.u = Matrix::uniform(hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng);
            if k == F {
                gate.b.fill(1.0);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.gates[0].w.cols()
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].w.rows()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.gates
            .iter()
            .flat_map(|g| [g.w.data(), g.u.data(), g.b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.gates
            .iter_mut()
            .flat_map(|g| [g.w.data_mut(), g.u.data_mut(), g.b.as_mut_slice()])
            .collect()
    }

    pub fn tensor_names() -> Vec<String> {
        GATE_NAMES
            .iter()
            .flat_map(|g| ["w", "u", "b"].map(|t| format!("lstm.{g}.{t}")))
            .collect()
    }

    fn is_consistent(&self) -> bool {
        let (d, h) = (self.input_dim(), self.hidden());
        self.gates.iter().all(|g| {
            g.w.rows() == h && g.w.cols() == d && g.u.rows() == h && g.u.cols() == h && g.b.len() == h
        })
    }
}

#[derive(Debug, Clone)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    act: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    input_dim: usize,
    hidden: usize,
    steps: Vec<Step>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs the recurrence from `h₀ = c₀ = 0` and returns the final hidden state.
pub fn lstm_forward(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmCache), NnError> {
    if !params.is_consistent() {
        return Err(NnError::Contract("inconsistent LSTM parameter shapes".into()));
    }
    let (d, h) = (params.input_dim(), params.hidden());
    if inputs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != d {
            return Err(NnError::Shape {
                what: "LSTM input",
                expected: d,
                found: x.len(),
            });
        }
        let act: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let gate = &params.gates[k];
            let mut z = gate.b.clone();
            gate.w.matvec_acc(x, &mut z);
            gate.u.matvec_acc(&h_prev, &mut z);
            if k == G {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            z
        });
        let c: Vec<f64> = (0..h)
            .map(|j| act[F][j] * c_prev[j] + act[I][j] * act[G][j])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h_next: Vec<f64> = (0..h).map(|j| act[O][j] * tanh_c[j]).collect();
        steps.push(Step {
            x: x.clone(),
            h_prev: std::mem::replace(&mut h_prev, h_next),
            c_prev: std::mem::replace(&mut c_prev, c),
            act,
            tanh_c,
        });
    }
    Ok((
        h_prev,
        LstmCache {
            input_dim: d,
            hidden: h,
            steps,
        },
    ))
}

/// Exact gradients of a loss with respect to every LSTM parameter and every
/// input vector, given `∂loss/∂h_T`.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    d_final_hidden: &[f64],
) -> Result<(LstmParams, Vec<Vec<f64>>), NnError> {
    let (d, h) = (params.input_dim(), params.hidden());
    if cache.input_dim != d || cache.hidden != h {
        return Err(NnError::Contract(format!(
            "cache built for input {} hidden {}, parameters have input {d} hidden {h}",
            cache.input_dim, cache.hidden
        )));
    }
    if d_final_hidden.len() != h {
        return Err(NnError::Shape {
            what: "hidden gradient",
            expected: h,
            found: d_final_hidden.len(),
        });
    }
    let mut grads = LstmParams::zeros(d, h);
    let mut dx_all = vec![Vec::new(); cache.steps.len()];
    let mut dh = d_final_hidden.to_vec();
    let mut dc_next = vec![0.0; h];
    for (t, step) in cache.steps.iter().enumerate().rev() {
        let [i, f, o, g] = &step.act;
        let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let dc = dc_next[j] + dh[j] * o[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
            dz[O][j] = dh[j] * step.tanh_c[j] * o[j] * (1.0 - o[j]);
            dz[I][j] = dc * g[j] * i[j] * (1.0 - i[j]);
            dz[F][j] = dc * step.c_prev[j] * f[j] * (1.0 - f[j]);
            dz[G][j] = dc * i[j] * (1.0 - g[j] * g[j]);
            dc_prev[j] = dc * f[j];
        }
        let mut dx = vec![0.0; d];
        let mut dh_prev = vec![0.0; h];
        for k in 0..4 {
            let gp = &params.gates[k];
            let gg = &mut grads.gates[k];
            gg.w.add_outer(&dz[k], &step.x);
            gg.u.add_outer(&dz[k], &step.h_prev);
            gg.b.iter_mut().zip(&dz[k]).for_each(|(b, z)| *b += z);
            gp.w.matvec_t_acc(&dz[k], &mut dx);
            gp.u.matvec_t_acc(&dz[k], &mut dh_prev);
        }
        dx_all[t] = dx;
        dh = dh_prev;
        dc_next = dc_prev;
    }
    Ok((grads, dx_all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_zero_hidden() {
        let p = LstmParams::zeros(3, 5);
        let (h, cache) = lstm_forward(&p, &[vec![1.0, -2.0, 0.5], vec![3.0, 3.0, 3.0]]).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert_eq!(cache.len(), 2);
    }

    /// Scalar recurrence evaluated independently of the vectorized code.
    fn scalar_reference(w: [f64; 4], u: [f64; 4], b: [f64; 4], xs: &[f64]) -> f64 {
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for &x in xs {
            let i = s(w[0] * x + u[0] * h + b[0]);
            let f = s(w[1] * x + u[1] * h + b[1]);
            let o = s(w[2] * x + u[2] * h + b[2]);
            let g = (w[3] * x + u[3] * h + b[3]).tanh();
            c = f * c + i * g;
            h = o * c.tanh();
        }
        h
    }

    fn scalar_params(w: [f64; 4], u: [f64; 4], b: [f64; 4]) -> LstmParams {
        let mut p = LstmParams::zeros(1, 1);
        for k in 0..4 {
            p.gates[k].w = Matrix::from_vec(1, 1, vec![w[k]]);
            p.gates[k].u = Matrix::from_vec(1, 1, vec![u[k]]);
            p.gates[k].b = vec![b[k]];
        }
        p
    }

    #[test]
    fn hand_set_two_steps() {
        let (w, u, b) = ([0.5, -0.3, 0.8, 1.2], [0.1, 0.4, -0.2, 0.7], [0.0, 1.0, 0.1, -0.1]);
        let p = scalar_params(w, u, b);
        let (h, _) = lstm_forward(&p, &[vec![1.0], vec![-0.5]]).unwrap();
        // Step 1: i=σ(0.5), f=σ(0.7), o=σ(0.9), g=tanh(1.1), c1=i·g, h1=o·tanh(c1).
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let c1 = s(0.5) * 1.1f64.tanh();
        let h1 = s(0.9) * c1.tanh();
        let i2 = s(-0.25 + 0.1 * h1);
        let f2 = s(0.15 + 0.4 * h1 + 1.0);
        let o2 = s(-0.4 - 0.2 * h1 + 0.1);
        let g2 = (-0.6 + 0.7 * h1 - 0.1).tanh();
        let c2 = f2 * c1 + i2 * g2;
        let h2 = o2 * c2.tanh();
        assert!((h[0] - h2).abs() < 1e-12);
        assert!((h[0] - scalar_reference(w, u, b, &[1.0, -0.5])).abs() < 1e-12);
    }

    #[test]
    fn single_step_gradients_match_hand_derivation() {
        let (w, u, b) = ([0.5, -0.3, 0.8, 1.2], [0.1, 0.4, -0.2, 0.7], [0.0, 1.0, 0.1, -0.1]);
        let p = scalar_params(w, u, b);
        let x = 0.7;
        let (_, cache) = lstm_forward(&p, &[vec![x]]).unwrap();
        let (g, dx) = lstm_backward(&p, &cache, &[1.0]).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (i, o, gg) = (s(w[0] * x + b[0]), s(w[2] * x + b[2]), (w[3] * x + b[3]).tanh());
        let c = i * gg;
        let tc = c.tanh();
        // h = o·tanh(i·g) with c₀ = 0, so the forget gate has no influence.
        let dc = o * (1.0 - tc * tc);
        let dzi = dc * gg * i * (1.0 - i);
        let dzo = tc * o * (1.0 - o);
        let dzg = dc * i * (1.0 - gg * gg);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
        assert!(close(g.gates[0].w.data()[0], dzi * x));
        assert!(close(g.gates[1].w.data()[0], 0.0));
        assert!(close(g.gates[2].b[0], dzo));
        assert!(close(g.gates[3].w.data()[0], dzg * x));
        assert!(g.gates.iter().all(|gate| gate.u.data()[0] == 0.0));
        assert!(close(dx[0][0], dzi * w[0] + dzo * w[2] + dzg * w[3]));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(4, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let (_, cache) = lstm_forward(&p, &xs).unwrap();
        let (g, dx) = lstm_backward(&p, &cache, &[0.0; 3]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let p = LstmParams::zeros(2, 2);
        assert!(matches!(lstm_forward(&p, &[vec![1.0]]), Err(NnError::Shape { .. })));
        assert!(matches!(lstm_forward(&p, &[]), Err(NnError::EmptySequence)));
        let (_, cache) = lstm_forward(&p, &[vec![1.0, 1.0]]).unwrap();
        let other = LstmParams::zeros(3, 2);
        assert!(matches!(lstm_backward(&other, &cache, &[1.0, 1.0]), Err(NnError::Contract(_))));
        assert!(matches!(lstm_backward(&p, &cache, &[1.0]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn init_bounds_and_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(16, 4, &mut rng);
        assert!(p.gates[0].w.data().iter().all(|v| v.abs() <= 0.25));
        assert!(p.gates[0].u.data().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(p.gates[1].b, vec![1.0; 4]);
        assert_eq!(p.gates[0].b, vec![0.0; 4]);
    }
}
