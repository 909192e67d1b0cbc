//! Append-only results file: one row per (method, eval table, metric,
//! fold), with the config hash on every row.

use anyhow::{Context, Result};
use std::io::Write;
use std::path::Path;
use unitab_core::evaluate::EvalResult;

pub const RESULTS_HEADER: &str = "pretrain,eval,metric,fold,value,seed,config_hash";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub pretrain: String,
    pub eval: String,
    pub metric: String,
    pub fold: usize,
    /// `None` = metric undefined on this fold; written as `nan`.
    pub value: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl ResultRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            self.pretrain,
            self.eval,
            self.metric,
            self.fold,
            self.value.map_or("nan".to_string(), |v| format!("{v}")),
            self.seed,
            self.config_hash
        )
    }
}

/// Expands evaluation results into per-fold rows.
pub fn rows_from_results(
    results: &[EvalResult],
    seed: u64,
    config_hash: &str,
) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for r in results {
        for (fold, value) in r.fold_values.iter().enumerate() {
            rows.push(ResultRow {
                pretrain: r.pretrain_table.clone(),
                eval: r.eval_table.clone(),
                metric: r.metric.to_string(),
                fold,
                value: *value,
                seed,
                config_hash: config_hash.to_string(),
            });
        }
    }
    rows
}

/// Appends rows, creating the file (with header) on first use. Each row is
/// written as one line-atomic `write` call.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        file.write_all(format!("{RESULTS_HEADER}\n").as_bytes())?;
    }
    for row in rows {
        file.write_all(row.to_line().as_bytes())?;
    }
    Ok(())
}

/// Reads a results file back.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            anyhow::bail!("{}:{}: expected 7 fields, got {}", path.display(), i + 1, f.len());
        }
        let value: f64 = f[4].parse().with_context(|| format!("line {}", i + 1))?;
        rows.push(ResultRow {
            pretrain: f[0].to_string(),
            eval: f[1].to_string(),
            metric: f[2].to_string(),
            fold: f[3].parse()?,
            value: (!value.is_nan()).then_some(value),
            seed: f[5].parse()?,
            config_hash: f[6].to_string(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_including_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            ResultRow {
                pretrain: "campus".into(),
                eval: "orchard".into(),
                metric: "auc-ovr".into(),
                fold: 0,
                value: Some(0.75),
                seed: 1,
                config_hash: "abc".into(),
            },
            ResultRow {
                pretrain: "baseline-forest".into(),
                eval: "orchard".into(),
                metric: "auc-ovr".into(),
                fold: 1,
                value: None,
                seed: 1,
                config_hash: "abc".into(),
            },
        ];
        append_rows(&path, &rows[..1]).unwrap();
        append_rows(&path, &rows[1..]).unwrap();
        let back = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(RESULTS_HEADER));
        assert_eq!(text.lines().count(), 3);
    }
}
