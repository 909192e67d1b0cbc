//! Episode construction: turning a task plus sampled rows into the
//! preprocessed (context, query) pair the model consumes.
//!
//! Preprocessing contract (shared with downstream inference):
//! - masked columns are removed, not zeroed;
//! - features are z-scored with context statistics only, missing entries
//!   imputed with the context column mean (0 after z-scoring);
//! - the feature matrix is zero-padded to `f_max` columns and scaled by
//!   `f_max / active_feature_count`;
//! - regression targets are standardized by context mean/std;
//! - classification targets are remapped to dense codes by context
//!   frequency, keeping at most `c_max` classes; rows with other classes
//!   are dropped.

use crate::error::{CoreError, RejectReason};
use crate::table::Table;
use crate::task::{HeadKind, Task};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum EpisodeTargets<T> {
    Classes(Vec<usize>),
    Reals(Vec<T>),
}

/// A preprocessed context/query pair.
#[derive(Debug, Clone)]
pub struct Episode<T> {
    pub head: HeadKind,
    /// `[ctx_rows, f_max]`
    pub ctx_x: Tensor<T>,
    /// `[qry_rows, f_max]`
    pub qry_x: Tensor<T>,
    pub ctx_y: EpisodeTargets<T>,
    pub qry_y: EpisodeTargets<T>,
    pub active_features: usize,
    /// Classification: number of kept (dense) classes.
    pub n_classes: usize,
    /// Regression: context target statistics used for standardization.
    pub target_mean: f64,
    pub target_std: f64,
}

impl<T: Scalar> Episode<T> {
    pub fn ctx_rows(&self) -> usize {
        self.ctx_x.shape()[0]
    }

    pub fn qry_rows(&self) -> usize {
        self.qry_x.shape()[0]
    }
}

/// Per-column context statistics for feature standardization.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Computes context-column mean/std over non-missing (non-NaN) entries.
/// Columns with no observed values or zero spread get std 0, which encodes
/// "emit zeros".
pub fn context_feature_stats(ctx_rows: &[Vec<f64>], n_features: usize) -> FeatureStats {
    let mut mean = vec![0.0; n_features];
    let mut std = vec![0.0; n_features];
    for c in 0..n_features {
        let vals: Vec<f64> = ctx_rows
            .iter()
            .map(|r| r[c])
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
        mean[c] = m;
        std[c] = var.sqrt();
    }
    FeatureStats { mean, std }
}

/// Standardizes one raw feature row against context stats, imputes missing
/// entries with 0, zero-pads to `f_max` and applies the width rescale.
fn standardized_row(raw: &[f64], stats: &FeatureStats, f_max: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; f_max];
    for (c, &v) in raw.iter().enumerate() {
        let z = if !v.is_finite() || stats.std[c] < STD_FLOOR {
            0.0
        } else {
            (v - stats.mean[c]) / stats.std[c]
        };
        out[c] = z * scale;
    }
    out
}

/// Preprocesses raw context and query feature rows (active columns only,
/// NaN = missing) into padded, scaled matrices. Returns row-major buffers of
/// width `f_max`.
pub fn preprocess_features(
    ctx_rows: &[Vec<f64>],
    qry_rows: &[Vec<f64>],
    f_max: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize), CoreError> {
    let active = ctx_rows.first().map_or(0, |r| r.len());
    if active == 0 {
        return Err(CoreError::InvalidInput("no active features".into()));
    }
    if active > f_max {
        return Err(CoreError::EpisodeRejected(RejectReason::TooManyFeatures));
    }
    if qry_rows.iter().any(|r| r.len() != active) {
        return Err(CoreError::InvalidInput(
            "query feature count differs from context".into(),
        ));
    }
    let stats = context_feature_stats(ctx_rows, active);
    let scale = f_max as f64 / active as f64;
    let mut ctx = Vec::with_capacity(ctx_rows.len() * f_max);
    for r in ctx_rows {
        ctx.extend(standardized_row(r, &stats, f_max, scale));
    }
    let mut qry = Vec::with_capacity(qry_rows.len() * f_max);
    for r in qry_rows {
        qry.extend(standardized_row(r, &stats, f_max, scale));
    }
    Ok((ctx, qry, active))
}

/// Standardizes regression targets by context mean and (population) std.
pub fn standardize_targets(
    ctx_targets: &[f64],
) -> Result<(f64, f64), RejectReason> {
    let n = ctx_targets.len() as f64;
    let mean = ctx_targets.iter().sum::<f64>() / n;
    let var = ctx_targets.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > STD_FLOOR) {
        return Err(RejectReason::ZeroVarianceTarget);
    }
    Ok((mean, std))
}

/// Dense remap of class codes by context frequency: rank classes by
/// (count descending, code ascending), keep the top `c_max`.
#[derive(Debug, Clone)]
pub struct ClassRemap {
    /// dense code -> original code, ordered by context frequency
    pub kept: Vec<usize>,
    map: HashMap<usize, usize>,
}

impl ClassRemap {
    pub fn from_context(ctx_codes: &[usize], c_max: usize) -> Self {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &c in ctx_codes {
            *counts.entry(c).or_insert(0) += 1;
        }
        let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(c_max);
        let kept: Vec<usize> = ranked.into_iter().map(|(code, _)| code).collect();
        let map = kept.iter().enumerate().map(|(d, &c)| (c, d)).collect();
        ClassRemap { kept, map }
    }

    pub fn n_classes(&self) -> usize {
        self.kept.len()
    }

    pub fn dense(&self, original: usize) -> Option<usize> {
        self.map.get(&original).copied()
    }
}

/// Uniform sample of `count` distinct indices from `0..n` (partial
/// Fisher-Yates), in draw order.
pub fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    debug_assert!(count <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Builds one episode for a task. Rows are sampled without replacement from
/// rows with a non-missing target; context and query are disjoint.
pub fn build_episode<T: Scalar>(
    table: &Table,
    task: &Task,
    ctx_size: usize,
    qry_size: usize,
    rng: &mut ChaCha8Rng,
    f_max: usize,
    c_max: usize,
) -> Result<Episode<T>, CoreError> {
    let target_col = table.column(task.target);
    let feature_idx = task.feature_indices();
    if feature_idx.len() > f_max {
        return Err(CoreError::EpisodeRejected(RejectReason::TooManyFeatures));
    }

    let usable: Vec<usize> = (0..table.n_rows())
        .filter(|&r| !target_col.missing[r])
        .collect();
    if usable.len() < ctx_size + qry_size {
        return Err(CoreError::EpisodeRejected(RejectReason::TooFewRows));
    }

    let picked = sample_without_replacement(rng, usable.len(), ctx_size + qry_size);
    let ctx_rows_idx: Vec<usize> = picked[..ctx_size].iter().map(|&i| usable[i]).collect();
    let qry_rows_idx: Vec<usize> = picked[ctx_size..].iter().map(|&i| usable[i]).collect();

    let gather = |rows: &[usize]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                feature_idx
                    .iter()
                    .map(|&c| table.column(c).feature_value(r))
                    .collect()
            })
            .collect()
    };

    match task.head {
        HeadKind::Classification => {
            let ctx_codes: Vec<usize> = ctx_rows_idx
                .iter()
                .map(|&r| target_col.values[r] as usize)
                .collect();
            let remap = ClassRemap::from_context(&ctx_codes, c_max);
            if remap.n_classes() < 2 {
                return Err(CoreError::EpisodeRejected(RejectReason::TooFewClasses));
            }
            let ctx_keep: Vec<usize> = (0..ctx_rows_idx.len())
                .filter(|&i| remap.dense(ctx_codes[i]).is_some())
                .collect();
            let ctx_y: Vec<usize> = ctx_keep
                .iter()
                .map(|&i| remap.dense(ctx_codes[i]).unwrap())
                .collect();
            let ctx_rows_idx: Vec<usize> = ctx_keep.iter().map(|&i| ctx_rows_idx[i]).collect();

            let mut qry_rows_kept = Vec::new();
            let mut qry_y = Vec::new();
            for &r in &qry_rows_idx {
                let code = target_col.values[r] as usize;
                if let Some(d) = remap.dense(code) {
                    qry_rows_kept.push(r);
                    qry_y.push(d);
                }
            }
            if qry_rows_kept.is_empty() {
                return Err(CoreError::EpisodeRejected(RejectReason::EmptyQuery));
            }

            let (ctx_buf, qry_buf, active) =
                preprocess_features(&gather(&ctx_rows_idx), &gather(&qry_rows_kept), f_max)?;
            Ok(Episode {
                head: HeadKind::Classification,
                ctx_x: cast_matrix(ctx_buf, ctx_rows_idx.len(), f_max),
                qry_x: cast_matrix(qry_buf, qry_rows_kept.len(), f_max),
                ctx_y: EpisodeTargets::Classes(ctx_y),
                qry_y: EpisodeTargets::Classes(qry_y),
                active_features: active,
                n_classes: remap.n_classes(),
                target_mean: 0.0,
                target_std: 1.0,
            })
        }
        HeadKind::Regression => {
            let ctx_t: Vec<f64> = ctx_rows_idx
                .iter()
                .map(|&r| target_col.values[r])
                .collect();
            let (mean, std) =
                standardize_targets(&ctx_t).map_err(CoreError::EpisodeRejected)?;
            let ctx_y: Vec<T> = ctx_t
                .iter()
                .map(|&v| T::from_f64((v - mean) / std))
                .collect();
            let qry_y: Vec<T> = qry_rows_idx
                .iter()
                .map(|&r| T::from_f64((target_col.values[r] - mean) / std))
                .collect();

            let (ctx_buf, qry_buf, active) =
                preprocess_features(&gather(&ctx_rows_idx), &gather(&qry_rows_idx), f_max)?;
            Ok(Episode {
                head: HeadKind::Regression,
                ctx_x: cast_matrix(ctx_buf, ctx_rows_idx.len(), f_max),
                qry_x: cast_matrix(qry_buf, qry_rows_idx.len(), f_max),
                ctx_y: EpisodeTargets::Reals(ctx_y),
                qry_y: EpisodeTargets::Reals(qry_y),
                active_features: active,
                n_classes: 0,
                target_mean: mean,
                target_std: std,
            })
        }
    }
}

fn cast_matrix<T: Scalar>(buf: Vec<f64>, rows: usize, cols: usize) -> Tensor<T> {
    let data: Vec<T> = buf.into_iter().map(T::from_f64).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("matrix dims")
}
