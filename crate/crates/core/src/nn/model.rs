//! The complete classifier: optional learned table → LSTM → dropout → head.

use rand::Rng;

use super::dropout::{dropout, DropoutMask};
use super::embedding::EmbeddingTable;
use super::head::{bce_loss, head_backward, head_forward, logit_grad, HeadOutput, HeadParams};
use super::lstm::{lstm_backward, lstm_forward, LstmParams};
use super::matrix::Matrix;
use super::NnError;
use crate::embeddings::EmbeddingSequence;

/// Anything exposing its trainable tensors in a fixed declaration order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub lstm: LstmParams,
    pub head: HeadParams,
    /// Present for the learned-table front end.
    pub table: Option<EmbeddingTable>,
}

/// Mirror of [`Model`]'s trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm: LstmParams,
    pub head: HeadParams,
    pub table: Option<Matrix>,
}

/// What the classifier reads for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    /// Precomputed vectors, one per step.
    Vectors(Vec<Vec<f64>>),
    /// Token indices into the model's table.
    Tokens(Vec<usize>),
}

impl ModelInput {
    pub fn from_sequence(seq: &EmbeddingSequence) -> Self {
        ModelInput::Vectors(
            seq.vectors()
                .map(|v| v.iter().map(|&x| x as f64).collect())
                .collect(),
        )
    }
}

/// How dropout is applied on the final hidden state.
pub enum DropoutMode<'a, R: Rng> {
    Off,
    Train { rate: f64, rng: &'a mut R },
}

/// Loss, prediction and gradients for one example.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub loss: f64,
    pub p: f64,
    pub clamped: bool,
    pub grads: Gradients,
}

impl Model {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            lstm: LstmParams::zeros(input_dim, hidden),
            head: HeadParams::zeros(hidden),
            table: None,
        }
    }

    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            lstm: LstmParams::init(input_dim, hidden, rng),
            head: HeadParams::init(hidden, rng),
            table: None,
        }
    }

    pub fn with_table(mut self, table: EmbeddingTable) -> Self {
        self.table = Some(table);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = LstmParams::tensor_names();
        names.push("head.w".into());
        names.push("head.b".into());
        if self.table.is_some() {
            names.push("table".into());
        }
        names
    }

    fn vectors(&self, input: &ModelInput) -> Result<Vec<Vec<f64>>, NnError> {
        match (input, &self.table) {
            (ModelInput::Vectors(v), _) => Ok(v.clone()),
            (ModelInput::Tokens(idx), Some(t)) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= t.vocab.len()) {
                    return Err(NnError::Contract(format!("token index {bad} outside vocabulary")));
                }
                Ok(t.lookup(idx))
            }
            (ModelInput::Tokens(_), None) => {
                Err(NnError::Contract("token input given to a model without a table".into()))
            }
        }
    }

    /// Inference probability of the positive class, dropout off.
    pub fn predict_proba(&self, input: &ModelInput) -> Result<f64, NnError> {
        let xs = self.vectors(input)?;
        let (h, _) = lstm_forward(&self.lstm, &xs)?;
        Ok(head_forward(&self.head, &h).p)
    }

    /// Head output with dropout off.
    pub fn forward(&self, input: &ModelInput) -> Result<HeadOutput, NnError> {
        let xs = self.vectors(input)?;
        let (h, _) = lstm_forward(&self.lstm, &xs)?;
        Ok(head_forward(&self.head, &h))
    }

    /// Unweighted loss with dropout off.
    pub fn loss(&self, input: &ModelInput, y: f64) -> Result<f64, NnError> {
        Ok(bce_loss(self.forward(input)?.p, y).0)
    }

    /// Forward and backward pass for one example with target `y ∈ {0, 1}`.
    /// `weight` scales loss and gradients.
    pub fn loss_and_grad<R: Rng>(
        &self,
        input: &ModelInput,
        y: f64,
        weight: f64,
        drop: DropoutMode<'_, R>,
    ) -> Result<ExampleGrad, NnError> {
        let xs = self.vectors(input)?;
        let (h, cache) = lstm_forward(&self.lstm, &xs)?;
        let (h_drop, mask) = match drop {
            DropoutMode::Off => (h.clone(), DropoutMask::identity(h.len())),
            DropoutMode::Train { rate, rng } => dropout(&h, rate, rng, true),
        };
        let out = head_forward(&self.head, &h_drop);
        let (loss, dp) = bce_loss(out.p, y);
        let d_logit = weight * logit_grad(&out, dp);
        let (dw, db, dh_drop) = head_backward(&self.head, &h_drop, d_logit);
        let dh = mask.backward(&dh_drop);
        let (lstm_grads, dx) = lstm_backward(&self.lstm, &cache, &dh)?;
        let table = self.table.as_ref().map(|t| {
            let mut d = Matrix::zeros(t.table.rows(), t.table.cols());
            if let (true, ModelInput::Tokens(idx)) = (t.trainable, input) {
                EmbeddingTable::scatter_grad(&mut d, idx, &dx);
            }
            d
        });
        Ok(ExampleGrad {
            loss: weight * loss,
            p: out.p,
            clamped: out.clamped,
            grads: Gradients {
                lstm: lstm_grads,
                head: HeadParams { w: dw, b: db },
                table,
            },
        })
    }
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            lstm: LstmParams::zeros(model.input_dim(), model.hidden()),
            head: HeadParams::zeros(model.hidden()),
            table: model
                .table
                .as_ref()
                .map(|t| Matrix::zeros(t.table.rows(), t.table.cols())),
        }
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.lstm.tensors();
        t.push(&self.head.w);
        t.push(std::slice::from_ref(&self.head.b));
        if let Some(tab) = &self.table {
            t.push(tab.table.data());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.lstm.tensors_mut();
        t.push(&mut self.head.w);
        t.push(std::slice::from_mut(&mut self.head.b));
        if let Some(tab) = &mut self.table {
            t.push(tab.table.data_mut());
        }
        t
    }
}

impl ParamSet for Gradients {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.lstm.tensors();
        t.push(&self.head.w);
        t.push(std::slice::from_ref(&self.head.b));
        if let Some(tab) = &self.table {
            t.push(tab.data());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.lstm.tensors_mut();
        t.push(&mut self.head.w);
        t.push(std::slice::from_mut(&mut self.head.b));
        if let Some(tab) = &mut self.table {
            t.push(tab.data_mut());
        }
        t
    }
}
