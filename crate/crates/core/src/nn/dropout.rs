use rand::Rng;

/// Per-component multipliers applied by inverted dropout: 0 for dropped
/// components, `1/(1-rate)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn identity(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        h.iter().zip(&self.0).map(|(v, m)| v * m).collect()
    }

    /// Gradient through the mask is the same elementwise scaling.
    pub fn backward(&self, d: &[f64]) -> Vec<f64> {
        self.apply(d)
    }

    pub fn factors(&self) -> &[f64] {
        &self.0
    }
}

/// Inverted dropout. Identity whenever `training` is false or `rate` is 0.
pub fn dropout(h: &[f64], rate: f64, rng: &mut impl Rng, training: bool) -> (Vec<f64>, DropoutMask) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    if !training || rate == 0.0 {
        return (h.to_vec(), DropoutMask::identity(h.len()));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = DropoutMask(
        (0..h.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    );
    (mask.apply(h), mask)
}
