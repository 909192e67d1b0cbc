//! Row/column ablation of a table for the feature-vs-instance importance
//! protocol.

use crate::error::CoreError;
use crate::rng;
use crate::table::{Column, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Rows,
    Columns,
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationAxis::Rows => "rows",
            AblationAxis::Columns => "columns",
        })
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rows" => Ok(AblationAxis::Rows),
            "columns" => Ok(AblationAxis::Columns),
            other => Err(CoreError::InvalidInput(format!(
                "unknown ablation axis '{other}'"
            ))),
        }
    }
}

/// Removes `floor(drop_fraction * n)` uniformly random rows or columns,
/// deterministically per seed. Remaining entries keep their original order.
/// With `drop_fraction < 1` at least one column always survives.
pub fn ablate_table(
    table: &Table,
    axis: AblationAxis,
    drop_fraction: f64,
    seed: u64,
) -> Result<Table, CoreError> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(CoreError::InvalidInput(format!(
            "drop fraction {drop_fraction} outside [0, 1)"
        )));
    }
    if drop_fraction == 0.0 {
        return Ok(table.clone());
    }
    let axis_word = match axis {
        AblationAxis::Rows => 0u64,
        AblationAxis::Columns => 1u64,
    };
    let mut stream = rng::stream(seed, &[rng::tag("ablate"), axis_word]);

    match axis {
        AblationAxis::Rows => {
            let n = table.n_rows();
            let drop = (drop_fraction * n as f64).floor() as usize;
            let dropped = crate::episode::sample_without_replacement(&mut stream, n, drop);
            let mut keep_mask = vec![true; n];
            for &d in &dropped {
                keep_mask[d] = false;
            }
            let columns: Vec<Column> = table
                .columns()
                .iter()
                .map(|c| {
                    let mut col = c.clone();
                    col.values = c
                        .values
                        .iter()
                        .zip(&keep_mask)
                        .filter_map(|(&v, &k)| k.then_some(v))
                        .collect();
                    col.missing = c
                        .missing
                        .iter()
                        .zip(&keep_mask)
                        .filter_map(|(&m, &k)| k.then_some(m))
                        .collect();
                    col
                })
                .collect();
            Table::new(table.name.clone(), table.domain, columns, n - drop)
        }
        AblationAxis::Columns => {
            let n = table.n_cols();
            let drop = (drop_fraction * n as f64).floor() as usize;
            debug_assert!(drop < n, "fraction < 1 always leaves a column");
            let dropped = crate::episode::sample_without_replacement(&mut stream, n, drop);
            let columns: Vec<Column> = table
                .columns()
                .iter()
                .enumerate()
                .filter(|(i, _)| !dropped.contains(i))
                .map(|(_, c)| c.clone())
                .collect();
            Table::new(table.name.clone(), table.domain, columns, table.n_rows())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnKind, DomainTag};

    fn toy(cols: usize, rows: usize) -> Table {
        let columns = (0..cols)
            .map(|i| Column {
                name: format!("c{i}"),
                kind: ColumnKind::Numeric,
                values: (0..rows).map(|r| (r + i) as f64).collect(),
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            })
            .collect();
        Table::new("toy".into(), DomainTag::Other, columns, rows).unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let t = toy(4, 10);
        let out = ablate_table(&t, AblationAxis::Rows, 0.0, 1).unwrap();
        assert_eq!(out.n_rows(), 10);
        assert_eq!(out.n_cols(), 4);
        for (a, b) in t.columns().iter().zip(out.columns()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn floor_rule_on_columns() {
        let t = toy(10, 6);
        let out = ablate_table(&t, AblationAxis::Columns, 0.7, 3).unwrap();
        assert_eq!(out.n_cols(), 3);
        assert_eq!(out.n_rows(), 6);
    }

    #[test]
    fn rows_drop_is_deterministic_per_seed() {
        let t = toy(3, 50);
        let a = ablate_table(&t, AblationAxis::Rows, 0.5, 7).unwrap();
        let b = ablate_table(&t, AblationAxis::Rows, 0.5, 7).unwrap();
        let c = ablate_table(&t, AblationAxis::Rows, 0.5, 8).unwrap();
        assert_eq!(a.column(0).values, b.column(0).values);
        assert_ne!(a.column(0).values, c.column(0).values);
        assert_eq!(a.n_rows(), 25);
    }

    // Sweep grid {0.0, 0.1, ..., 0.9} on both axes: 10 + 10 - 1 distinct
    // tables because 0.0 is the shared identity.
    #[test]
    fn sweep_grid_produces_nineteen_distinct_tables() {
        let t = toy(10, 40);
        let mut signatures = std::collections::HashSet::new();
        for axis in [AblationAxis::Rows, AblationAxis::Columns] {
            for i in 0..10 {
                let f = i as f64 / 10.0;
                let out = ablate_table(&t, axis, f, 99).unwrap();
                let sig = (
                    out.n_rows(),
                    out.n_cols(),
                    out.columns()
                        .iter()
                        .flat_map(|c| c.values.iter().map(|v| v.to_bits()))
                        .collect::<Vec<_>>(),
                );
                signatures.insert(sig);
            }
        }
        assert_eq!(signatures.len(), 19);
    }

    #[test]
    fn out_of_range_fraction_is_an_error() {
        let t = toy(3, 5);
        assert!(ablate_table(&t, AblationAxis::Rows, 1.0, 1).is_err());
        assert!(ablate_table(&t, AblationAxis::Rows, -0.1, 1).is_err());
    }
}
