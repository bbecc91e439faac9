//! Accuracy and macro-F1 over the two post classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BULLYING, NOT_BULLYING};

/// Class labels in matrix index order.
pub const CLASSES: [i8; 2] = [NOT_BULLYING, BULLYING];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metric undefined on an empty evaluation set")]
    Empty,
    #[error("label {0} is not -1 or +1")]
    BadLabel(i8),
    #[error("{truths} truths but {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
}

fn class_index(label: i8) -> Result<usize, MetricsError> {
    CLASSES
        .iter()
        .position(|&c| c == label)
        .ok_or(MetricsError::BadLabel(label))
}

/// `counts[true][predicted]`, indexed by [`CLASSES`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: i8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn from_pairs(truths: &[i8], predictions: &[i8]) -> Result<Self, MetricsError> {
        if truths.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                truths: truths.len(),
                predictions: predictions.len(),
            });
        }
        let mut cm = Self::default();
        for (&t, &p) in truths.iter().zip(predictions) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: i8, predicted: i8) -> Result<(), MetricsError> {
        self.counts[class_index(truth)?][class_index(predicted)?] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    /// Percentage of correct predictions.
    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::Empty),
            n => Ok(100.0 * self.correct() as f64 / n as f64),
        }
    }

    /// Precision, recall and F1 treating `label` as the positive class.
    /// Zero denominators give 0.
    pub fn class_scores(&self, label: i8) -> Result<ClassScores, MetricsError> {
        let k = class_index(label)?;
        let tp = self.counts[k][k];
        let predicted = self.counts[0][k] + self.counts[1][k];
        let actual = self.counts[k][0] + self.counts[k][1];
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        // 2PR/(P+R) = 2TP/(predicted+actual), which is exact and 0 when TP = 0.
        let f1 = ratio(2 * tp, predicted + actual);
        Ok(ClassScores {
            label,
            precision,
            recall,
            f1,
            support: actual,
        })
    }

    pub fn macro_f1(&self) -> Result<f64, MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::Empty);
        }
        let sum: f64 = CLASSES
            .iter()
            .map(|&c| self.class_scores(c).map(|s| s.f1))
            .sum::<Result<f64, _>>()?;
        Ok(sum / CLASSES.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: u64,
    /// Percentage in [0, 100].
    pub accuracy: f64,
    pub classes: Vec<ClassScores>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self, MetricsError> {
        Ok(Self {
            n_examples: cm.total(),
            accuracy: cm.accuracy()?,
            classes: CLASSES
                .iter()
                .map(|&c| cm.class_scores(c))
                .collect::<Result<_, _>>()?,
            macro_f1: cm.macro_f1()?,
            confusion: cm,
        })
    }

    pub fn from_pairs(truths: &[i8], predictions: &[i8]) -> Result<Self, MetricsError> {
        Self::from_confusion(ConfusionMatrix::from_pairs(truths, predictions)?)
    }
}

/// Aligned plain-text table with Model, Accuracy and Macro F1 columns.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let header = ["Model", "Accuracy", "Macro F1"];
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.2}%", r.accuracy),
                format!("{:.4}", r.macro_f1),
            ]
        })
        .collect();
    let width = |c: usize| {
        cells
            .iter()
            .map(|r| r[c].chars().count())
            .chain([header[c].len()])
            .max()
            .unwrap()
    };
    let w = [width(0), width(1), width(2)];
    let mut out = format!(
        "{:<w0$}  {:>w1$}  {:>w2$}\n",
        header[0],
        header[1],
        header[2],
        w0 = w[0],
        w1 = w[1],
        w2 = w[2]
    );
    out.push_str(&format!("{}\n", "-".repeat(w[0] + w[1] + w[2] + 4)));
    for r in &cells {
        out.push_str(&format!(
            "{:<w0$}  {:>w1$}  {:>w2$}\n",
            r[0],
            r[1],
            r[2],
            w0 = w[0],
            w1 = w[1],
            w2 = w[2]
        ));
    }
    out
}
