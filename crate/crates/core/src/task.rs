//! Task construction from a single table: one column becomes the target,
//! a non-empty subset of the remaining columns become features, the rest
//! are masked out (removed). The number of such tasks is what a budget
//! sweep varies.

use crate::error::CoreError;
use crate::rng;
use crate::table::{ColumnKind, Table};
use rand::Rng;
use std::collections::HashSet;

/// Saturation cap for task counts on wide tables.
pub const TASK_COUNT_CAP: u64 = 1 << 62;

/// Widest table the sampler supports; feature subsets are u64 bitmasks.
pub const MAX_SAMPLED_COLUMNS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Classification,
    Regression,
}

/// One pre-training task: a target column plus a feature subset drawn from
/// the remaining columns. `features` is a bitmask over all column indices
/// with the target bit always clear and at least one bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Task {
    pub target: usize,
    pub features: u64,
    pub head: HeadKind,
}

impl Task {
    pub fn feature_count(&self) -> usize {
        self.features.count_ones() as usize
    }

    pub fn feature_indices(&self) -> Vec<usize> {
        (0..MAX_SAMPLED_COLUMNS)
            .filter(|&i| self.features & (1 << i) != 0)
            .collect()
    }
}

/// The sampled (or exhausted) task list for one table and budget.
#[derive(Debug, Clone)]
pub struct TaskSpace {
    pub table: String,
    pub k: usize,
    /// Exact task count over eligible targets, saturating at
    /// [`TASK_COUNT_CAP`]; ignores the episode feature-width limit.
    pub total_tasks: u64,
    pub budget: usize,
    pub tasks: Vec<Task>,
}

/// Columns that can serve as a prediction target: numeric columns (head =
/// regression) and categorical columns with at least 2 observed labels
/// (head = classification). Kind follows the column, never the distinct
/// value count.
pub fn eligible_targets(table: &Table) -> Vec<(usize, HeadKind)> {
    table
        .columns()
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c.kind {
            ColumnKind::Numeric => Some((i, HeadKind::Regression)),
            ColumnKind::Categorical if c.cardinality.unwrap_or(0) >= 2 => {
                Some((i, HeadKind::Classification))
            }
            ColumnKind::Categorical => None,
        })
        .collect()
}

/// Exact task count: each eligible target contributes `2^(k-1) - 1`
/// non-empty feature subsets of the remaining `k - 1` columns. Saturates at
/// [`TASK_COUNT_CAP`].
pub fn count_tasks(k: usize, eligible: &[usize]) -> u64 {
    if k < 2 {
        return 0;
    }
    let n_targets = eligible.iter().filter(|&&t| t < k).count() as u64;
    let per_target = if k - 1 >= 63 {
        TASK_COUNT_CAP
    } else {
        ((1u64 << (k - 1)) - 1).min(TASK_COUNT_CAP)
    };
    per_target
        .saturating_mul(n_targets)
        .min(TASK_COUNT_CAP)
}

/// Number of tasks whose feature subset also fits the model width; this is
/// what the sampler can actually exhaust.
fn count_feasible(k: usize, n_targets: u64, f_max: usize) -> u64 {
    if k < 2 {
        return 0;
    }
    let n = k - 1;
    let limit = n.min(f_max);
    let mut sum: u64 = 0;
    // partial binomial sum over subset sizes 1..=limit
    let mut binom: u128 = 1; // C(n, 0)
    for j in 1..=limit {
        binom = binom * (n - j + 1) as u128 / j as u128;
        sum = sum.saturating_add(binom.min(TASK_COUNT_CAP as u128) as u64);
        if sum >= TASK_COUNT_CAP {
            sum = TASK_COUNT_CAP;
            break;
        }
    }
    sum.saturating_mul(n_targets).min(TASK_COUNT_CAP)
}

/// Deterministically samples `min(budget, attainable)` distinct tasks,
/// uniformly without replacement via rejection sampling and deduplication.
///
/// For a fixed seed the task stream does not depend on the budget, so a
/// smaller budget's list is always a prefix of a larger one's.
pub fn build_task_space(
    table: &Table,
    budget: usize,
    seed: u64,
    f_max: usize,
) -> Result<TaskSpace, CoreError> {
    let k = table.n_cols();
    if k < 2 {
        return Err(CoreError::InvalidInput(format!(
            "task construction needs at least 2 columns, table '{}' has {k}",
            table.name
        )));
    }
    if k > MAX_SAMPLED_COLUMNS {
        return Err(CoreError::InvalidInput(format!(
            "table '{}' has {k} columns; the sampler supports at most {MAX_SAMPLED_COLUMNS}",
            table.name
        )));
    }
    if budget == 0 {
        return Err(CoreError::InvalidInput("task budget must be >= 1".into()));
    }
    let eligible = eligible_targets(table);
    if eligible.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "table '{}' has no eligible target columns",
            table.name
        )));
    }
    let eligible_idx: Vec<usize> = eligible.iter().map(|(i, _)| *i).collect();
    let total_tasks = count_tasks(k, &eligible_idx);
    let feasible = count_feasible(k, eligible.len() as u64, f_max);
    let want = (budget as u64).min(feasible) as usize;

    let mut rng = rng::stream(seed, &[rng::tag("taskspc")]);
    let mut seen: HashSet<(usize, u64)> = HashSet::with_capacity(want * 2);
    let mut tasks = Vec::with_capacity(want);
    let all_bits: u64 = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    while tasks.len() < want {
        let (target, head) = eligible[rng.gen_range(0..eligible.len())];
        let subset_bits = all_bits & !(1u64 << target);
        let mask = rng.gen::<u64>() & subset_bits;
        if mask == 0 || mask.count_ones() as usize > f_max {
            continue;
        }
        if seen.insert((target, mask)) {
            tasks.push(Task {
                target,
                features: mask,
                head,
            });
        }
    }

    Ok(TaskSpace {
        table: table.name.clone(),
        k,
        total_tasks,
        budget,
        tasks,
    })
}
