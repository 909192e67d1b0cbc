//! Frozen-weight downstream evaluation with retrieval-assembled contexts,
//! plus forest and linear baselines on identical folds.

use crate::checkpoint::Checkpoint;
use crate::error::CoreError;
use crate::metrics::{self, Metric};
use crate::model::{predict_downstream, DownstreamOutput, DownstreamTargets};
use crate::retrieval::retrieve_context;
use crate::rng;
use crate::table::{ColumnKind, Table};
use crate::tensor::Scalar;
use crate::trees::{
    fit_forest, fit_logistic, fit_ridge, ForestParams, TreeTask, LOGISTIC_MAX_ITER,
};
use rand::seq::SliceRandom;

/// Default retrieval size, clamped to the context pool.
pub const DEFAULT_RETRIEVAL_K: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    /// Fraction of usable rows forming the context pool (the rest are
    /// queries).
    pub context_fraction: f64,
    pub folds: usize,
    /// Per-query retrieved context size; clamped to the pool.
    pub retrieval_k: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            context_fraction: 0.8,
            folds: 3,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(0.0 < self.context_fraction && self.context_fraction < 1.0) {
            return Err(CoreError::InvalidInput(
                "context fraction must be in (0, 1)".into(),
            ));
        }
        if self.folds == 0 {
            return Err(CoreError::InvalidInput("folds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Prediction method behind a result row. Baselines do not depend on the
/// checkpoint; in emitted files they appear under the pseudo pretrain names
/// `baseline-forest` / `baseline-linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Icl,
    Forest,
    Linear,
}

impl Method {
    pub fn result_pretrain_name<'a>(&self, checkpoint_table: &'a str) -> &'a str {
        match self {
            Method::Icl => checkpoint_table,
            Method::Forest => "baseline-forest",
            Method::Linear => "baseline-linear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub eval_table: String,
    pub pretrain_table: String,
    pub method: Method,
    pub metric: Metric,
    /// One entry per fold; `None` when the metric is undefined on that fold.
    pub fold_values: Vec<Option<f64>>,
    /// Arithmetic mean over the defined folds.
    pub mean: Option<f64>,
}

fn summarize(values: Vec<Option<f64>>) -> (Vec<Option<f64>>, Option<f64>) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (values, mean)
}

/// Per-fold predictions of one method on one table.
#[derive(Debug, Clone)]
pub enum FoldPredictions {
    Classification { probs: Vec<Vec<f64>>, truth: Vec<usize> },
    Regression { preds: Vec<f64>, truth: Vec<f64> },
}

impl FoldPredictions {
    /// Metric values for this fold, in a fixed metric order.
    pub fn metrics(&self) -> Vec<(Metric, Option<f64>)> {
        match self {
            FoldPredictions::Classification { probs, truth } => {
                let classes: Vec<usize> = probs.iter().map(|p| metrics::argmax(p)).collect();
                vec![
                    (Metric::Accuracy, metrics::accuracy(&classes, truth)),
                    (Metric::AucOvr, metrics::auc_ovr(probs, truth)),
                ]
            }
            FoldPredictions::Regression { preds, truth } => vec![
                (Metric::R2, metrics::r2(preds, truth)),
                (Metric::Pearson, metrics::pearson(preds, truth)),
                (Metric::Spearman, metrics::spearman(preds, truth)),
            ],
        }
    }
}

/// One evaluation fold: deterministic context/query split plus the shared
/// preprocessing both the ICL path and the baselines consume.
pub struct Fold {
    pub pool_rows: Vec<usize>,
    pub query_rows: Vec<usize>,
    /// Raw feature rows (NaN = missing), aligned with `pool_rows`.
    pub pool_raw: Vec<Vec<f64>>,
    pub query_raw: Vec<Vec<f64>>,
    /// Z-scored by pool statistics, missing imputed to 0; retrieval space
    /// and baseline feature space.
    pub pool_z: Vec<Vec<f64>>,
    pub query_z: Vec<Vec<f64>>,
}

pub fn split_fold(
    table: &Table,
    target_col: usize,
    protocol: &EvalProtocol,
    fold: usize,
) -> Result<Fold, CoreError> {
    let target = table.column(target_col);
    let usable: Vec<usize> = (0..table.n_rows())
        .filter(|&r| !target.missing[r])
        .collect();
    if usable.len() < 4 {
        return Err(CoreError::InvalidInput(format!(
            "table '{}' has only {} usable rows for target '{}'",
            table.name,
            usable.len(),
            target.name
        )));
    }
    let mut rows = usable;
    let mut stream = rng::stream(protocol.seed, &[rng::tag("fold"), fold as u64]);
    rows.shuffle(&mut stream);
    let pool_n = ((rows.len() as f64 * protocol.context_fraction) as usize)
        .clamp(1, rows.len() - 1);
    let (pool_rows, query_rows) = rows.split_at(pool_n);

    let feature_cols: Vec<usize> = (0..table.n_cols()).filter(|&c| c != target_col).collect();
    let gather = |rs: &[usize]| -> Vec<Vec<f64>> {
        rs.iter()
            .map(|&r| {
                feature_cols
                    .iter()
                    .map(|&c| table.column(c).feature_value(r))
                    .collect()
            })
            .collect()
    };
    let pool_raw = gather(pool_rows);
    let query_raw = gather(query_rows);

    // z-score by pool statistics for the retrieval/baseline space
    let stats = crate::episode::context_feature_stats(&pool_raw, feature_cols.len());
    let z = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(c, &v)| {
                        if !v.is_finite() || stats.std[c] < 1e-8 {
                            0.0
                        } else {
                            (v - stats.mean[c]) / stats.std[c]
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let pool_z = z(&pool_raw);
    let query_z = z(&query_raw);

    Ok(Fold {
        pool_rows: pool_rows.to_vec(),
        query_rows: query_rows.to_vec(),
        pool_raw,
        query_raw,
        pool_z,
        query_z,
    })
}

fn icl_fold_predictions<T: Scalar>(
    ckpt: &Checkpoint<T>,
    table: &Table,
    target_col: usize,
    fold: &Fold,
    k: usize,
) -> Result<FoldPredictions, CoreError> {
    let target = table.column(target_col);
    let k = k.min(fold.pool_rows.len()).max(1);

    match target.kind {
        ColumnKind::Categorical => {
            let cardinality = target.cardinality.unwrap_or(0);
            let pool_codes: Vec<usize> = fold
                .pool_rows
                .iter()
                .map(|&r| target.values[r] as usize)
                .collect();
            let truth: Vec<usize> = fold
                .query_rows
                .iter()
                .map(|&r| target.values[r] as usize)
                .collect();
            let mut probs = Vec::with_capacity(fold.query_rows.len());
            for (qz, qraw) in fold.query_z.iter().zip(&fold.query_raw) {
                let picked = retrieve_context(&fold.pool_z, qz, k)?;
                let ctx_raw: Vec<Vec<f64>> =
                    picked.iter().map(|&i| fold.pool_raw[i].clone()).collect();
                let ctx_codes: Vec<usize> = picked.iter().map(|&i| pool_codes[i]).collect();
                let out = predict_downstream(
                    &ckpt.weights,
                    &ckpt.model_config,
                    &ctx_raw,
                    &DownstreamTargets::Classes {
                        codes: ctx_codes,
                        cardinality,
                    },
                    std::slice::from_ref(qraw),
                )?;
                match out {
                    DownstreamOutput::ClassProbs(mut p) => probs.push(p.remove(0)),
                    _ => unreachable!("classification targets produce class probs"),
                }
            }
            Ok(FoldPredictions::Classification { probs, truth })
        }
        ColumnKind::Numeric => {
            let pool_y: Vec<f64> = fold.pool_rows.iter().map(|&r| target.values[r]).collect();
            let truth: Vec<f64> = fold.query_rows.iter().map(|&r| target.values[r]).collect();
            let mut preds = Vec::with_capacity(fold.query_rows.len());
            for (qz, qraw) in fold.query_z.iter().zip(&fold.query_raw) {
                let picked = retrieve_context(&fold.pool_z, qz, k)?;
                let ctx_raw: Vec<Vec<f64>> =
                    picked.iter().map(|&i| fold.pool_raw[i].clone()).collect();
                let ctx_y: Vec<f64> = picked.iter().map(|&i| pool_y[i]).collect();
                let out = predict_downstream(
                    &ckpt.weights,
                    &ckpt.model_config,
                    &ctx_raw,
                    &DownstreamTargets::Reals(ctx_y.clone()),
                    std::slice::from_ref(qraw),
                );
                match out {
                    Ok(DownstreamOutput::Reals(mut p)) => preds.push(p.remove(0)),
                    Ok(_) => unreachable!("regression targets produce reals"),
                    // constant retrieved context: fall back to its mean
                    Err(CoreError::EpisodeRejected(_)) => {
                        preds.push(ctx_y.iter().sum::<f64>() / ctx_y.len() as f64)
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(FoldPredictions::Regression { preds, truth })
        }
    }
}

fn baseline_fold_predictions(
    method: Method,
    table: &Table,
    target_col: usize,
    fold: &Fold,
    seed: u64,
) -> Result<FoldPredictions, CoreError> {
    let target = table.column(target_col);
    match target.kind {
        ColumnKind::Categorical => {
            let n_classes = target.cardinality.unwrap_or(0);
            let train_y: Vec<f64> = fold
                .pool_rows
                .iter()
                .map(|&r| target.values[r])
                .collect();
            let truth: Vec<usize> = fold
                .query_rows
                .iter()
                .map(|&r| target.values[r] as usize)
                .collect();
            let probs: Vec<Vec<f64>> = match method {
                Method::Forest => {
                    let model = fit_forest(
                        &fold.pool_z,
                        &train_y,
                        TreeTask::Classification { n_classes },
                        ForestParams {
                            seed,
                            ..ForestParams::default()
                        },
                    )?;
                    fold.query_z.iter().map(|r| model.predict_row(r)).collect()
                }
                Method::Linear => {
                    let classes: Vec<usize> = train_y.iter().map(|&v| v as usize).collect();
                    let model =
                        fit_logistic(&fold.pool_z, &classes, n_classes, LOGISTIC_MAX_ITER)?;
                    fold.query_z.iter().map(|r| model.predict_probs(r)).collect()
                }
                Method::Icl => unreachable!("ICL goes through the checkpoint path"),
            };
            Ok(FoldPredictions::Classification { probs, truth })
        }
        ColumnKind::Numeric => {
            let train_y: Vec<f64> = fold.pool_rows.iter().map(|&r| target.values[r]).collect();
            let truth: Vec<f64> = fold.query_rows.iter().map(|&r| target.values[r]).collect();
            let preds: Vec<f64> = match method {
                Method::Forest => {
                    let model = fit_forest(
                        &fold.pool_z,
                        &train_y,
                        TreeTask::Regression,
                        ForestParams {
                            seed,
                            ..ForestParams::default()
                        },
                    )?;
                    fold.query_z.iter().map(|r| model.predict_row(r)[0]).collect()
                }
                Method::Linear => {
                    let model = fit_ridge(&fold.pool_z, &train_y, 1.0)?;
                    fold.query_z.iter().map(|r| model.predict_row(r)).collect()
                }
                Method::Icl => unreachable!("ICL goes through the checkpoint path"),
            };
            Ok(FoldPredictions::Regression { preds, truth })
        }
    }
}

/// Evaluates a checkpoint (and the requested baselines, on identical folds)
/// on one table. Refuses a table that shares its name with the checkpoint's
/// pre-training table: the corpora must stay disjoint.
pub fn evaluate<T: Scalar>(
    ckpt: &Checkpoint<T>,
    table: &Table,
    target_col: usize,
    protocol: &EvalProtocol,
    baselines: &[Method],
) -> Result<Vec<EvalResult>, CoreError> {
    protocol.validate()?;
    if table.name == ckpt.table_name {
        return Err(CoreError::InvalidInput(format!(
            "evaluation table '{}' is the pre-training table; corpora must not overlap",
            table.name
        )));
    }
    if target_col >= table.n_cols() {
        return Err(CoreError::InvalidInput("target column out of range".into()));
    }
    let target = table.column(target_col);
    if target.missing.iter().all(|&m| m) {
        return Err(CoreError::InvalidInput(format!(
            "target column '{}' is entirely missing",
            target.name
        )));
    }
    let n_features = table.n_cols() - 1;
    if n_features > ckpt.model_config.f_max {
        return Err(CoreError::InvalidInput(format!(
            "table '{}' has {} features, model supports {}",
            table.name, n_features, ckpt.model_config.f_max
        )));
    }

    let mut methods = vec![Method::Icl];
    methods.extend_from_slice(baselines);

    let mut per_method_fold: Vec<Vec<Vec<(Metric, Option<f64>)>>> =
        vec![Vec::new(); methods.len()];
    for fold_idx in 0..protocol.folds {
        let fold = split_fold(table, target_col, protocol, fold_idx)?;
        for (mi, method) in methods.iter().enumerate() {
            let preds = match method {
                Method::Icl => {
                    icl_fold_predictions(ckpt, table, target_col, &fold, protocol.retrieval_k)?
                }
                other => baseline_fold_predictions(
                    *other,
                    table,
                    target_col,
                    &fold,
                    protocol.seed ^ fold_idx as u64,
                )?,
            };
            per_method_fold[mi].push(preds.metrics());
        }
    }

    let mut results = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let folds = &per_method_fold[mi];
        let metric_kinds: Vec<Metric> = folds[0].iter().map(|(m, _)| *m).collect();
        for (metric_idx, metric) in metric_kinds.iter().enumerate() {
            let values: Vec<Option<f64>> =
                folds.iter().map(|fold| fold[metric_idx].1).collect();
            let (fold_values, mean) = summarize(values);
            results.push(EvalResult {
                eval_table: table.name.clone(),
                pretrain_table: method.result_pretrain_name(&ckpt.table_name).to_string(),
                method: *method,
                metric: *metric,
                fold_values,
                mean,
            });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;
    use crate::model::{ModelConfig, Weights};
    use crate::table::{Column, DomainTag};
    use crate::trainer::TrainConfig;
    use rand::Rng;

    fn toy_eval_table(rows: usize, seed: u64) -> Table {
        // binary label, linearly separable-ish in 3 features
        let mut stream = rng::stream(seed, &[rng::tag("evaltoy")]);
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 3];
        let mut labels = Vec::new();
        for _ in 0..rows {
            let x: Vec<f64> = (0..3).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect();
            let y = usize::from(x[0] + 0.5 * x[1] > 0.0);
            for (c, v) in cols.iter_mut().zip(&x) {
                c.push(*v);
            }
            labels.push(y as f64);
        }
        let mut columns: Vec<Column> = cols
            .into_iter()
            .enumerate()
            .map(|(i, values)| Column {
                name: format!("f{i}"),
                kind: ColumnKind::Numeric,
                values,
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            })
            .collect();
        columns.push(Column {
            name: "label".into(),
            kind: ColumnKind::Categorical,
            values: labels,
            missing: vec![false; rows],
            cardinality: Some(2),
            labels: vec!["no".into(), "yes".into()],
        });
        Table::new("evaltoy".into(), DomainTag::Other, columns, rows).unwrap()
    }

    /// Features as in `toy_eval_table`, labels drawn independently.
    fn permuted_label_table(rows: usize, seed: u64) -> Table {
        let base = toy_eval_table(rows, seed);
        let mut stream = rng::stream(seed, &[rng::tag("permlbl")]);
        let cols: Vec<Column> = base
            .columns()
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if c.name == "label" {
                    c.values = (0..rows).map(|_| stream.gen_range(0..2) as f64).collect();
                }
                c
            })
            .collect();
        Table::new("permtoy".into(), DomainTag::Other, cols, rows).unwrap()
    }

    fn untrained_checkpoint(seed: u64) -> Checkpoint<f64> {
        let cfg = ModelConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            f_max: 4,
            c_max: 4,
            dropout: 0.0,
        };
        Checkpoint {
            weights: Weights::init_with_random_heads(&cfg, seed).unwrap(),
            model_config: cfg,
            train_config: TrainConfig::default(),
            table_name: "pretrain-src".into(),
            step: 0,
            final_cls_loss: 1.0,
            final_reg_loss: 1.0,
            rng_cursor: 0,
            config_hash: String::new(),
        }
    }

    #[test]
    fn perfect_predictions_score_one_on_every_metric() {
        let truth = vec![0usize, 1, 0, 1, 1, 0];
        let probs: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| {
                let mut p = vec![0.0; 2];
                p[t] = 1.0;
                p
            })
            .collect();
        let fp = FoldPredictions::Classification { probs, truth };
        for (metric, value) in fp.metrics() {
            assert_eq!(value, Some(1.0), "{metric} not 1.0");
        }

        let truth_r = vec![1.0, 2.0, 3.0, 4.0];
        let fp = FoldPredictions::Regression {
            preds: truth_r.clone(),
            truth: truth_r,
        };
        for (metric, value) in fp.metrics() {
            assert_eq!(value, Some(1.0), "{metric} not 1.0");
        }
    }

    // Permutation-null oracle: label-permuted predictions hover at AUC 0.5.
    #[test]
    fn label_permuted_predictions_have_chance_level_auc() {
        let mut stream = rng::stream(5, &[rng::tag("permnull")]);
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|_| stream.gen::<f64>()).collect();
        let mut aucs = Vec::new();
        for _ in 0..100 {
            let labels: Vec<usize> = (0..n).map(|_| stream.gen_range(0..2)).collect();
            let probs: Vec<Vec<f64>> = scores.iter().map(|&s| vec![1.0 - s, s]).collect();
            if let Some(a) = metrics::auc_ovr(&probs, &labels) {
                aucs.push(a);
            }
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "null AUC mean {mean}");
    }

    #[test]
    fn three_folds_give_three_values_per_metric() {
        let table = toy_eval_table(60, 1);
        let ckpt = untrained_checkpoint(2);
        let protocol = EvalProtocol {
            retrieval_k: 16,
            seed: 3,
            ..EvalProtocol::default()
        };
        let results = evaluate(&ckpt, &table, 3, &protocol, &[Method::Forest]).unwrap();
        for r in &results {
            assert_eq!(r.fold_values.len(), 3, "{:?} {:?}", r.method, r.metric);
        }
        // ICL emits accuracy + auc-ovr; forest likewise
        assert_eq!(results.len(), 4);
        let icl_auc = results
            .iter()
            .find(|r| r.method == Method::Icl && r.metric == Metric::AucOvr)
            .unwrap();
        assert!(icl_auc.mean.is_some());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let table = toy_eval_table(50, 4);
        let ckpt = untrained_checkpoint(5);
        let protocol = EvalProtocol {
            retrieval_k: 8,
            folds: 2,
            seed: 11,
            ..EvalProtocol::default()
        };
        let a = evaluate(&ckpt, &table, 3, &protocol, &[]).unwrap();
        let b = evaluate(&ckpt, &table, 3, &protocol, &[]).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.fold_values, rb.fold_values);
        }
    }

    // Chance-level oracle by label permutation: on a 2-class toy whose
    // labels are independent of the features, random-weight models average
    // AUC 0.5 over 50 seeds. (On a locally separable toy even an untrained
    // model beats 0.5: single-class retrieved contexts force the right
    // answer through the observed-class mask.)
    #[test]
    fn random_weight_models_score_at_chance() {
        let table = permuted_label_table(60, 9);
        let protocol = EvalProtocol {
            folds: 1,
            retrieval_k: 16,
            seed: 2,
            ..EvalProtocol::default()
        };
        let mut aucs = Vec::new();
        for seed in 0..50 {
            let ckpt = untrained_checkpoint(seed);
            let results = evaluate(&ckpt, &table, 3, &protocol, &[]).unwrap();
            let auc = results
                .iter()
                .find(|r| r.metric == Metric::AucOvr)
                .and_then(|r| r.mean)
                .unwrap();
            aucs.push(auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "chance-level mean AUC {mean}");
    }

    #[test]
    fn pretrain_table_reuse_is_refused() {
        let mut table = toy_eval_table(50, 4);
        table.name = "pretrain-src".into();
        let ckpt = untrained_checkpoint(5);
        let res = evaluate(&ckpt, &table, 3, &EvalProtocol::default(), &[]);
        assert!(res.is_err());
    }

    #[test]
    fn baselines_share_the_icl_folds() {
        let table = toy_eval_table(60, 7);
        let protocol = EvalProtocol {
            folds: 2,
            seed: 9,
            ..EvalProtocol::default()
        };
        let f0 = split_fold(&table, 3, &protocol, 0).unwrap();
        let f0_again = split_fold(&table, 3, &protocol, 0).unwrap();
        assert_eq!(f0.pool_rows, f0_again.pool_rows);
        assert_eq!(f0.query_rows, f0_again.query_rows);
        let f1 = split_fold(&table, 3, &protocol, 1).unwrap();
        assert_ne!(f0.pool_rows, f1.pool_rows);
    }
}
