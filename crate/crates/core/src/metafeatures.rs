//! Meta-features of a pre-training dataset and the boosted meta-regressor
//! that predicts average downstream generalization from them.

use crate::checkpoint::Checkpoint;
use crate::error::CoreError;
use crate::metrics;
use crate::rng;
use crate::table::Table;
use crate::tensor::Scalar;
use crate::trees::{fit_boosted, BoostParams};
use rand::seq::SliceRandom;

/// Canonical meta-feature order.
pub const META_FEATURE_NAMES: [&str; 7] = [
    "n_features",
    "n_instances",
    "n_categorical",
    "n_numeric",
    "missing_fraction",
    "final_cls_loss",
    "final_reg_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetaFeatures {
    pub table_name: String,
    pub n_features: usize,
    pub n_instances: usize,
    pub n_categorical: usize,
    pub n_numeric: usize,
    pub missing_fraction: f64,
    pub final_cls_loss: f64,
    pub final_reg_loss: f64,
}

impl MetaFeatures {
    /// Values in [`META_FEATURE_NAMES`] order.
    pub fn vector(&self) -> Vec<f64> {
        vec![
            self.n_features as f64,
            self.n_instances as f64,
            self.n_categorical as f64,
            self.n_numeric as f64,
            self.missing_fraction,
            self.final_cls_loss,
            self.final_reg_loss,
        ]
    }
}

/// Counts come from the table, losses from the checkpoint trained on it;
/// the names must match.
pub fn extract_meta_features<T: Scalar>(
    table: &Table,
    ckpt: &Checkpoint<T>,
) -> Result<MetaFeatures, CoreError> {
    if table.name != ckpt.table_name {
        return Err(CoreError::InvalidInput(format!(
            "checkpoint was trained on '{}', not '{}'",
            ckpt.table_name, table.name
        )));
    }
    Ok(MetaFeatures {
        table_name: table.name.clone(),
        n_features: table.n_cols(),
        n_instances: table.n_rows(),
        n_categorical: table.n_categorical(),
        n_numeric: table.n_numeric(),
        missing_fraction: table.missing_fraction(),
        final_cls_loss: ckpt.final_cls_loss,
        final_reg_loss: ckpt.final_reg_loss,
    })
}

#[derive(Debug, Clone)]
pub struct MetaRegressorReport {
    pub heldout_r2: f64,
    /// Set when the held-out R² was undefined (constant scores) and
    /// reported as 0.
    pub degenerate: bool,
    /// (feature name, normalized importance), in input feature order.
    pub importances: Vec<(String, f64)>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Boosted meta-regressor over an arbitrary named feature matrix:
/// seeded 80/20 split, fit on the 80%, R² on the 20%.
pub fn fit_meta_regressor_matrix(
    feature_names: &[String],
    x: &[Vec<f64>],
    y: &[f64],
    split_seed: u64,
    params: BoostParams,
) -> Result<MetaRegressorReport, CoreError> {
    if x.len() < 10 {
        return Err(CoreError::InvalidInput(format!(
            "meta-regression needs at least 10 datasets, got {}",
            x.len()
        )));
    }
    if x.len() != y.len() || x[0].len() != feature_names.len() {
        return Err(CoreError::InvalidInput(
            "meta-regression inputs misaligned".into(),
        ));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut stream = rng::stream(split_seed, &[rng::tag("metasplt")]);
    order.shuffle(&mut stream);
    let test_n = (x.len() as f64 * 0.2).round().max(1.0) as usize;
    let (test_idx, train_idx) = order.split_at(test_n);

    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
    let model = fit_boosted(&train_x, &train_y, params)?;

    let preds: Vec<f64> = test_idx.iter().map(|&i| model.predict_row(&x[i])).collect();
    let truth: Vec<f64> = test_idx.iter().map(|&i| y[i]).collect();
    let (heldout_r2, degenerate) = match metrics::r2(&preds, &truth) {
        Some(v) if !model.degenerate => (v, false),
        _ => (0.0, true),
    };

    let importances = feature_names
        .iter()
        .cloned()
        .zip(model.importances())
        .collect();
    Ok(MetaRegressorReport {
        heldout_r2,
        degenerate,
        importances,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
    })
}

/// Meta-regression over the canonical 7 meta-features.
pub fn fit_meta_regressor(
    features: &[MetaFeatures],
    scores: &[f64],
    split_seed: u64,
) -> Result<MetaRegressorReport, CoreError> {
    let names: Vec<String> = META_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.vector()).collect();
    fit_meta_regressor_matrix(&names, &x, scores, split_seed, BoostParams::default())
}
