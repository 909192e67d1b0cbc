//! Analyses over a transfer matrix: per-evaluation rankings of the
//! pre-training datasets, pairwise Spearman correlations between those
//! rankings, and domain-to-domain average-rank grids.

use crate::error::CoreError;
use crate::metrics::{average_ranks, spearman};
use crate::table::DomainTag;

/// Histogram bin count for pairwise Spearman values: width 0.1 over [-1, 1].
pub const SPEARMAN_BINS: usize = 20;

/// Scores of every pre-training dataset on every evaluation dataset.
/// Row-major: `scores[p * eval_names.len() + e]`.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub pretrain_names: Vec<String>,
    pub eval_names: Vec<String>,
    scores: Vec<Option<f64>>,
    /// Metric recorded per evaluation column (accuracy for classification
    /// evaluations, correlation or R² for regression ones).
    pub eval_metrics: Vec<String>,
}

impl TransferMatrix {
    pub fn new(
        pretrain_names: Vec<String>,
        eval_names: Vec<String>,
        eval_metrics: Vec<String>,
    ) -> Result<Self, CoreError> {
        if eval_metrics.len() != eval_names.len() {
            return Err(CoreError::InvalidInput(
                "one metric label per evaluation column required".into(),
            ));
        }
        for p in &pretrain_names {
            if eval_names.contains(p) {
                return Err(CoreError::InvalidInput(format!(
                    "dataset '{p}' appears in both the pre-training and evaluation corpora"
                )));
            }
        }
        let n = pretrain_names.len() * eval_names.len();
        Ok(TransferMatrix {
            pretrain_names,
            eval_names,
            scores: vec![None; n],
            eval_metrics,
        })
    }

    pub fn set(&mut self, pretrain: usize, eval: usize, score: f64) {
        let e = self.eval_names.len();
        self.scores[pretrain * e + eval] = Some(score);
    }

    pub fn get(&self, pretrain: usize, eval: usize) -> Option<f64> {
        self.scores[pretrain * self.eval_names.len() + eval]
    }

    pub fn n_pretrain(&self) -> usize {
        self.pretrain_names.len()
    }

    pub fn n_eval(&self) -> usize {
        self.eval_names.len()
    }
}

/// Per-evaluation rank vectors over the pre-training datasets: rank 1 is
/// the best (highest) score, ties get average ranks, missing cells stay
/// `None`. Errors when a column has fewer than 2 scores.
pub fn rank_per_eval(matrix: &TransferMatrix) -> Result<Vec<Vec<Option<f64>>>, CoreError> {
    let mut out = Vec::with_capacity(matrix.n_eval());
    for e in 0..matrix.n_eval() {
        let present: Vec<(usize, f64)> = (0..matrix.n_pretrain())
            .filter_map(|p| matrix.get(p, e).map(|s| (p, s)))
            .collect();
        if present.len() < 2 {
            return Err(CoreError::InvalidInput(format!(
                "evaluation column '{}' has {} scores; ranking needs at least 2",
                matrix.eval_names[e],
                present.len()
            )));
        }
        // rank on negated scores so the highest score gets rank 1
        let negated: Vec<f64> = present.iter().map(|(_, s)| -s).collect();
        let ranks = average_ranks(&negated);
        let mut col = vec![None; matrix.n_pretrain()];
        for ((p, _), r) in present.iter().zip(ranks) {
            col[*p] = Some(r);
        }
        out.push(col);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PairwiseSpearman {
    /// (eval column i, eval column j, spearman) for every computable pair.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Pairs skipped because a column had fewer than 2 distinct ranks on
    /// the common rows.
    pub skipped: usize,
    /// Width-0.1 bins over [-1, 1]; the last bin includes 1.0.
    pub histogram: [usize; SPEARMAN_BINS],
}

/// Bin index for a correlation value under the documented edges.
pub fn spearman_bin(value: f64) -> usize {
    (((value + 1.0) / 0.1).floor() as usize).min(SPEARMAN_BINS - 1)
}

/// Spearman correlation between every pair of evaluation columns' rank
/// vectors (over their common non-missing pre-training rows).
pub fn pairwise_rank_correlation(ranks: &[Vec<Option<f64>>]) -> PairwiseSpearman {
    let mut result = PairwiseSpearman {
        pairs: Vec::new(),
        skipped: 0,
        histogram: [0; SPEARMAN_BINS],
    };
    for i in 0..ranks.len() {
        for j in i + 1..ranks.len() {
            let common: Vec<(f64, f64)> = ranks[i]
                .iter()
                .zip(&ranks[j])
                .filter_map(|(a, b)| a.zip(*b))
                .collect();
            let xs: Vec<f64> = common.iter().map(|(a, _)| *a).collect();
            let ys: Vec<f64> = common.iter().map(|(_, b)| *b).collect();
            match spearman(&xs, &ys) {
                Some(rho) => {
                    result.histogram[spearman_bin(rho)] += 1;
                    result.pairs.push((i, j, rho));
                }
                None => result.skipped += 1,
            }
        }
    }
    result
}

/// Average-rank grid over (pre-training domain, evaluation domain) pairs.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    pub train_domains: Vec<DomainTag>,
    pub eval_domains: Vec<DomainTag>,
    /// Row-major mean ranks; `None` marks an empty cell.
    pub mean_rank: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl DomainGrid {
    pub fn cell(&self, train: usize, eval: usize) -> (Option<f64>, usize) {
        let idx = train * self.eval_domains.len() + eval;
        (self.mean_rank[idx], self.counts[idx])
    }
}

/// Cell (A, B) = mean rank of pre-training datasets from domain A on
/// evaluation datasets from domain B (lower is better).
pub fn domain_matrix(
    matrix: &TransferMatrix,
    pretrain_domains: &[DomainTag],
    eval_domains: &[DomainTag],
) -> Result<DomainGrid, CoreError> {
    if pretrain_domains.len() != matrix.n_pretrain() || eval_domains.len() != matrix.n_eval() {
        return Err(CoreError::InvalidInput(
            "domain tags misaligned with the transfer matrix".into(),
        ));
    }
    let ranks = rank_per_eval(matrix)?;

    let mut train_doms: Vec<DomainTag> = pretrain_domains.to_vec();
    train_doms.sort();
    train_doms.dedup();
    let mut eval_doms: Vec<DomainTag> = eval_domains.to_vec();
    eval_doms.sort();
    eval_doms.dedup();

    let mut sums = vec![0.0; train_doms.len() * eval_doms.len()];
    let mut counts = vec![0usize; train_doms.len() * eval_doms.len()];
    for (e, col) in ranks.iter().enumerate() {
        let ei = eval_doms.iter().position(|d| *d == eval_domains[e]).unwrap();
        for (p, rank) in col.iter().enumerate() {
            if let Some(r) = rank {
                let ti = train_doms
                    .iter()
                    .position(|d| *d == pretrain_domains[p])
                    .unwrap();
                sums[ti * eval_doms.len() + ei] += r;
                counts[ti * eval_doms.len() + ei] += 1;
            }
        }
    }
    let mean_rank = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(DomainGrid {
        train_domains: train_doms,
        eval_domains: eval_doms,
        mean_rank,
        counts,
    })
}
