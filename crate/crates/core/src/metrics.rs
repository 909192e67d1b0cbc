//! Evaluation metrics: accuracy, pairwise AUC (binary and one-vs-rest
//! macro), R², Pearson and Spearman correlation. Undefined cases (single
//! class, zero variance) are `None`, never silently 0.

use crate::error::CoreError;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Accuracy,
    AucOvr,
    R2,
    Pearson,
    Spearman,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::AucOvr => "auc-ovr",
            Metric::R2 => "r2",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "auc-ovr" => Ok(Metric::AucOvr),
            "r2" => Ok(Metric::R2),
            "pearson" => Ok(Metric::Pearson),
            "spearman" => Ok(Metric::Spearman),
            other => Err(CoreError::InvalidInput(format!("unknown metric '{other}'"))),
        }
    }
}

/// 1-based ranks with ties assigned the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // positions are 1-based
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Option<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return None;
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Some(correct as f64 / truth.len() as f64)
}

/// Pairwise binary AUC with half credit for score ties:
/// P(score+ > score-) + 0.5 P(score+ = score-). Computed via the
/// Mann-Whitney rank-sum with average ranks, which is exactly that
/// definition. `None` when either class is absent.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    Some((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC: the unweighted mean of per-class binary AUCs
/// over classes observed in `truth`. `None` when the truth is single-class.
pub fn auc_ovr(probs: &[Vec<f64>], truth: &[usize]) -> Option<f64> {
    if probs.len() != truth.len() || truth.is_empty() {
        return None;
    }
    let n_classes = probs[0].len();
    let mut aucs = Vec::new();
    for c in 0..n_classes {
        let labels: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if !labels.iter().any(|&l| l) {
            continue; // class absent: one-vs-rest undefined, skipped
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        match auc_binary(&scores, &labels) {
            Some(a) => aucs.push(a),
            None => return None, // single-class truth
        }
    }
    if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}

/// Coefficient of determination `1 - SSE/SST`; `None` when the truth has
/// zero variance.
pub fn r2(predictions: &[f64], truth: &[f64]) -> Option<f64> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return None;
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let sst: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if sst == 0.0 {
        return None;
    }
    let sse: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Some(1.0 - sse / sst)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Spearman correlation: Pearson on average ranks (ties averaged).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Argmax with deterministic lowest-index tie-breaking.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
