//! Classifier scoring: ROC curves, AUC, mean squared residuals and the
//! descriptive series (imbalance histogram, queue survivor function).

use serde::{Deserialize, Serialize};

use crate::stats::TestResult;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_HISTOGRAM_BINS: usize = 201;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("both labels are required, got only {0}")]
    OneClassOnly(u8),
    #[error("no observations")]
    Empty,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("need at least 2 bins")]
    TooFewBins,
}

/// One ROC vertex, kept as integer counts so areas are computed exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RocCount {
    pub false_pos: u64,
    pub true_pos: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub positives: u64,
    pub negatives: u64,
    /// Vertices from (0, 0) to (negatives, positives). Each tie group of
    /// scores contributes one vertex, joined to the previous one by a
    /// straight (possibly diagonal) segment.
    pub vertices: Vec<RocCount>,
}

impl RocCurve {
    /// (false-positive rate, true-positive rate) pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let (n, p) = (self.negatives as f64, self.positives as f64);
        self.vertices
            .iter()
            .map(|v| (v.false_pos as f64 / n, v.true_pos as f64 / p))
            .collect()
    }

    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        // twice the area in count units: sum of dx * (y_prev + y_next)
        let twice: u128 = self
            .vertices
            .windows(2)
            .map(|w| {
                let dx = u128::from(w[1].false_pos - w[0].false_pos);
                dx * u128::from(w[0].true_pos + w[1].true_pos)
            })
            .sum();
        twice as f64 / (2 * u128::from(self.positives) * u128::from(self.negatives)) as f64
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(u64, u64), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 {
        return Err(EvalError::OneClassOnly(0));
    }
    if neg == 0 {
        return Err(EvalError::OneClassOnly(1));
    }
    Ok((pos, neg))
}

/// ROC curve swept over every distinct score, highest first.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve, EvalError> {
    let (positives, negatives) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut vertices = vec![RocCount {
        false_pos: 0,
        true_pos: 0,
    }];
    let mut cur = RocCount {
        false_pos: 0,
        true_pos: 0,
    };
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                cur.true_pos += 1;
            } else {
                cur.false_pos += 1;
            }
            k += 1;
        }
        vertices.push(cur);
    }
    Ok(RocCurve {
        positives,
        negatives,
        vertices,
    })
}

/// Area under the ROC curve, with tied scores given half credit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    Ok(roc_curve(scores, labels)?.area())
}

pub fn mean_squared_residual(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, &y)| (s - f64::from(y)).powi(2))
        .sum();
    Ok(sum / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Logistic,
    Local,
    Null,
}

impl ModelId {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Logistic => "logistic",
            ModelId::Local => "local",
            ModelId::Null => "null",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelId::Logistic),
            "local" => Ok(ModelId::Local),
            "null" => Ok(ModelId::Null),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model_id: ModelId,
    pub auc_in: f64,
    pub auc_out: f64,
    pub msr_in: f64,
    pub msr_out: f64,
    pub wald_x0: Option<TestResult>,
    pub wald_x1: Option<TestResult>,
    pub lr_full: Option<TestResult>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Scores both splits of a model given its predictions on each.
pub fn evaluate_scores(
    model_id: ModelId,
    train: (&[f64], &[u8]),
    test: (&[f64], &[u8]),
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        model_id,
        auc_in: auc(train.0, train.1)?,
        auc_out: auc(test.0, test.1)?,
        msr_in: mean_squared_residual(train.0, train.1)?,
        msr_out: mean_squared_residual(test.0, test.1)?,
        wald_x0: None,
        wald_x1: None,
        lr_full: None,
        n_train: train.1.len(),
        n_test: test.1.len(),
    })
}

/// Report for the constant one-half predictor. Both metrics are exact
/// regardless of the labels, so one-class inputs are accepted here.
pub fn null_model_report(train: &[u8], test: &[u8]) -> Result<EvalReport, EvalError> {
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::Empty);
    }
    let msr = |ys: &[u8]| mean_squared_residual(&vec![0.5; ys.len()], ys);
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        model_id: ModelId::Null,
        auc_in: 0.5,
        auc_out: 0.5,
        msr_in: msr(train)?,
        msr_out: msr(test)?,
        wald_x0: None,
        wald_x1: None,
        lr_full: None,
        n_train: train.len(),
        n_test: test.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Index of the bin holding `x`; the top edge belongs to the last bin.
    pub fn bin_of(&self, x: f64) -> usize {
        let bins = self.counts.len();
        let raw = ((x - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        (raw.max(0.0) as usize).min(bins - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width counts of imbalance values over [-1, 1].
pub fn imbalance_histogram(values: &[f64], bins: usize) -> Result<Histogram, EvalError> {
    if bins < 2 {
        return Err(EvalError::TooFewBins);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let mut h = Histogram {
        lo: -1.0,
        hi: 1.0,
        counts: vec![0; bins],
    };
    for &v in values {
        let b = h.bin_of(v);
        h.counts[b] += 1;
    }
    Ok(h)
}

/// Empirical survivor function `P(X > v)` at every observed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub n: u64,
    /// (value, number of observations strictly greater), ascending.
    pub steps: Vec<(u64, u64)>,
}

impl Survivor {
    pub fn points(&self) -> Vec<(u64, f64)> {
        self.steps.iter().map(|&(v, g)| (v, g as f64 / self.n as f64)).collect()
    }

    pub fn value_at(&self, x: u64) -> f64 {
        let idx = self.steps.partition_point(|&(v, _)| v <= x);
        let greater = if idx == 0 { self.n } else { self.steps[idx - 1].1 };
        greater as f64 / self.n as f64
    }
}

pub fn queue_survivor(lengths: &[u64]) -> Result<Survivor, EvalError> {
    if lengths.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u64;
    let mut steps = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        steps.push((v, n - i as u64));
    }
    Ok(Survivor { n, steps })
}
