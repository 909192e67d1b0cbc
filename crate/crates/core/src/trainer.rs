//! Pre-training loop: sample task -> build episode -> forward/loss ->
//! backward -> optimizer step, with a per-step loss trace and checkpoints.

use crate::checkpoint::Checkpoint;
use crate::episode::{build_episode, Episode};
use crate::error::CoreError;
use crate::model::{forward, loss, ModelConfig, Weights};
use crate::optim::{AdamParams, OptimizerState};
use crate::rng;
use crate::table::Table;
use crate::tape::Tape;
use crate::task::{HeadKind, TaskSpace};
use crate::tensor::Scalar;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

/// Rejection-storm window and threshold: abort when more than 90% of the
/// last 100 episode draws were rejected.
const STORM_WINDOW: usize = 100;
const STORM_LIMIT: usize = 90;

/// Loss-smoothing window for the recorded final losses.
const FINAL_LOSS_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_episodes: usize,
    pub ctx_size: usize,
    pub qry_size: usize,
    pub task_budget: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    /// Cosine decay floor, as a fraction of the peak learning rate.
    pub floor_frac: f64,
    pub seed: u64,
    /// Emit an intermediate checkpoint every this many steps (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_episodes: 8,
            ctx_size: 128,
            qry_size: 32,
            task_budget: 5000,
            warmup_steps: 100, // 5% of the default step count
            peak_lr: 3e-4,
            floor_frac: 0.1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.steps == 0 {
            return Err(CoreError::InvalidInput("steps must be >= 1".into()));
        }
        if self.warmup_steps >= self.steps {
            return Err(CoreError::InvalidInput(format!(
                "warmup {} must be < steps {}",
                self.warmup_steps, self.steps
            )));
        }
        if self.batch_episodes == 0 || self.ctx_size < 2 || self.qry_size == 0 {
            return Err(CoreError::InvalidInput(
                "batch/context/query sizes must be positive (context >= 2)".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at a step: linear warmup to the peak, then cosine decay
    /// to `floor_frac * peak`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let floor = self.peak_lr * self.floor_frac;
        let span = (self.steps - self.warmup_steps).max(1);
        let t = (step - self.warmup_steps) as f64 / span as f64;
        floor + 0.5 * (self.peak_lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One loss-trace entry; a head's slot is `None` when no episode of that
/// kind appeared in the step's batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub cls_loss: Option<f64>,
    pub reg_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug)]
pub struct PretrainResult<T> {
    pub checkpoint: Checkpoint<T>,
    pub trace: Vec<TraceRow>,
}

/// Loss trace as delimited text with header `step,cls_loss,reg_loss,lr`;
/// absent head losses are written as `nan`.
pub fn loss_trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,cls_loss,reg_loss,lr\n");
    for r in rows {
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x}"));
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.step,
            fmt(r.cls_loss),
            fmt(r.reg_loss),
            r.lr
        ));
    }
    out
}

pub fn write_loss_trace(path: &Path, rows: &[TraceRow]) -> Result<(), CoreError> {
    std::fs::write(path, loss_trace_csv(rows))
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Tracks rejection storms over a sliding window of episode draws.
struct StormGuard {
    window: VecDeque<bool>,
    rejected: usize,
}

impl StormGuard {
    fn new() -> Self {
        StormGuard {
            window: VecDeque::with_capacity(STORM_WINDOW),
            rejected: 0,
        }
    }

    fn record(&mut self, rejected: bool, step: usize) -> Result<(), CoreError> {
        if self.window.len() == STORM_WINDOW {
            if self.window.pop_front().unwrap() {
                self.rejected -= 1;
            }
        }
        self.window.push_back(rejected);
        if rejected {
            self.rejected += 1;
        }
        if self.window.len() == STORM_WINDOW && self.rejected > STORM_LIMIT {
            return Err(CoreError::RejectionStorm {
                step,
                rejected: self.rejected,
                window: STORM_WINDOW,
            });
        }
        Ok(())
    }
}

/// Draws episodes in a shuffled round-robin over the task list, so small
/// budgets revisit every task once per epoch. Episode RNG is keyed by the
/// global episode index, independent of batching or thread count.
struct EpisodeSource<'a> {
    table: &'a Table,
    space: &'a TaskSpace,
    model_cfg: &'a ModelConfig,
    train_cfg: &'a TrainConfig,
    cursor: u64,
    epoch: u64,
    order: Vec<usize>,
    storm: StormGuard,
}

impl<'a> EpisodeSource<'a> {
    fn new(
        table: &'a Table,
        space: &'a TaskSpace,
        model_cfg: &'a ModelConfig,
        train_cfg: &'a TrainConfig,
    ) -> Self {
        let mut src = EpisodeSource {
            table,
            space,
            model_cfg,
            train_cfg,
            cursor: 0,
            epoch: u64::MAX,
            order: Vec::new(),
            storm: StormGuard::new(),
        };
        src.reshuffle(0);
        src
    }

    fn reshuffle(&mut self, epoch: u64) {
        let mut order: Vec<usize> = (0..self.space.tasks.len()).collect();
        let mut stream = rng::stream(self.train_cfg.seed, &[rng::tag("epoch"), epoch]);
        order.shuffle(&mut stream);
        self.order = order;
        self.epoch = epoch;
    }

    fn next_episode<T: Scalar>(&mut self, step: usize) -> Result<Episode<T>, CoreError> {
        let n = self.space.tasks.len() as u64;
        loop {
            let epoch = self.cursor / n;
            if epoch != self.epoch {
                self.reshuffle(epoch);
            }
            let task = &self.space.tasks[self.order[(self.cursor % n) as usize]];
            // retries on rejection advance the attempt sub-stream, never the
            // cursor silently: each draw is recorded in the storm window
            for attempt in 0u64.. {
                let mut stream = rng::stream(
                    self.train_cfg.seed,
                    &[rng::tag("episode"), self.cursor, attempt],
                );
                match build_episode::<T>(
                    self.table,
                    task,
                    self.train_cfg.ctx_size,
                    self.train_cfg.qry_size,
                    &mut stream,
                    self.model_cfg.f_max,
                    self.model_cfg.c_max,
                ) {
                    Ok(ep) => {
                        self.storm.record(false, step)?;
                        self.cursor += 1;
                        return Ok(ep);
                    }
                    Err(CoreError::EpisodeRejected(_)) => {
                        self.storm.record(true, step)?;
                    }
                    Err(other) => return Err(other),
                }
            }
            unreachable!("attempt loop exits via return or storm error");
        }
    }
}

/// Pre-trains the backbone on one table. Deterministic given the configs
/// and seed: the loss trace and final weights are bitwise reproducible.
pub fn pretrain<T: Scalar>(
    table: &Table,
    space: &TaskSpace,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<PretrainResult<T>, CoreError> {
    pretrain_with_snapshots(table, space, model_cfg, train_cfg, |_| Ok(()))
}

/// As [`pretrain`], invoking `snapshot` every `checkpoint_every` steps with
/// the in-progress checkpoint.
pub fn pretrain_with_snapshots<T: Scalar>(
    table: &Table,
    space: &TaskSpace,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut snapshot: impl FnMut(&Checkpoint<T>) -> Result<(), CoreError>,
) -> Result<PretrainResult<T>, CoreError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if space.tasks.is_empty() {
        return Err(CoreError::InvalidInput("task space is empty".into()));
    }

    let mut weights = Weights::<T>::init(model_cfg, train_cfg.seed)?;
    let mut opt = OptimizerState::new(
        weights.arrays(),
        AdamParams {
            step_size: train_cfg.peak_lr,
            ..AdamParams::default()
        },
    );
    let mut source = EpisodeSource::new(table, space, model_cfg, train_cfg);
    let mut trace = Vec::with_capacity(train_cfg.steps);
    let mut cls_window: VecDeque<f64> = VecDeque::with_capacity(FINAL_LOSS_WINDOW);
    let mut reg_window: VecDeque<f64> = VecDeque::with_capacity(FINAL_LOSS_WINDOW);

    for step in 0..train_cfg.steps {
        let episodes: Vec<Episode<T>> = (0..train_cfg.batch_episodes)
            .map(|_| source.next_episode(step))
            .collect::<Result<_, _>>()?;

        // forward + backward per episode, in parallel; the reduction below
        // runs in episode order so results do not depend on thread count
        let per_episode: Vec<Result<(f64, HeadKind, Vec<Option<Vec<T>>>), CoreError>> = episodes
            .par_iter()
            .map(|ep| {
                let mut tape = Tape::new();
                let bound = weights.bind(&mut tape);
                let preds = forward(&mut tape, &bound, model_cfg, ep)?;
                let l = loss(&mut tape, &preds, ep)?;
                let loss_val = l.item().as_f64();
                let grads = tape.backward(&l)?;
                let flat: Vec<Option<Vec<T>>> = bound
                    .arrays()
                    .iter()
                    .map(|a| grads.get(a).map(|g| g.values().to_vec()))
                    .collect();
                Ok((loss_val, ep.head, flat))
            })
            .collect();

        let mut grad_acc: Vec<Option<Vec<T>>> = vec![None; weights.arrays().len()];
        let mut cls_losses = Vec::new();
        let mut reg_losses = Vec::new();
        for item in per_episode {
            let (loss_val, head, flat) = item.map_err(|e| match e {
                CoreError::NonFinite { op } => CoreError::Diverged {
                    step,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            if !loss_val.is_finite() {
                return Err(CoreError::Diverged {
                    step,
                    msg: "loss is not finite".into(),
                });
            }
            match head {
                HeadKind::Classification => cls_losses.push(loss_val),
                HeadKind::Regression => reg_losses.push(loss_val),
            }
            for (slot, g) in grad_acc.iter_mut().zip(flat) {
                if let Some(g) = g {
                    match slot {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&g) {
                                *a += *v;
                            }
                        }
                        None => *slot = Some(g),
                    }
                }
            }
        }
        let inv_batch = T::from_f64(1.0 / train_cfg.batch_episodes as f64);
        for slot in grad_acc.iter_mut().flatten() {
            for v in slot.iter_mut() {
                *v *= inv_batch;
            }
        }

        opt.params.step_size = train_cfg.learning_rate(step);
        let mut arrays = weights.arrays().to_vec();
        opt.adam_step(&mut arrays, &grad_acc)?;
        weights.replace_arrays(arrays)?;

        let mean = |v: &[f64]| -> Option<f64> {
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let cls_mean = mean(&cls_losses);
        let reg_mean = mean(&reg_losses);
        if let Some(v) = cls_mean {
            if cls_window.len() == FINAL_LOSS_WINDOW {
                cls_window.pop_front();
            }
            cls_window.push_back(v);
        }
        if let Some(v) = reg_mean {
            if reg_window.len() == FINAL_LOSS_WINDOW {
                reg_window.pop_front();
            }
            reg_window.push_back(v);
        }
        trace.push(TraceRow {
            step,
            cls_loss: cls_mean,
            reg_loss: reg_mean,
            lr: opt.params.step_size,
        });

        if train_cfg.checkpoint_every > 0
            && (step + 1) % train_cfg.checkpoint_every == 0
            && step + 1 < train_cfg.steps
        {
            let ckpt = assemble_checkpoint(
                &weights,
                model_cfg,
                train_cfg,
                table,
                step + 1,
                &cls_window,
                &reg_window,
                source.cursor,
            );
            snapshot(&ckpt)?;
        }
    }

    let checkpoint = assemble_checkpoint(
        &weights,
        model_cfg,
        train_cfg,
        table,
        train_cfg.steps,
        &cls_window,
        &reg_window,
        source.cursor,
    );
    Ok(PretrainResult { checkpoint, trace })
}

#[allow(clippy::too_many_arguments)]
fn assemble_checkpoint<T: Scalar>(
    weights: &Weights<T>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    table: &Table,
    step: usize,
    cls_window: &VecDeque<f64>,
    reg_window: &VecDeque<f64>,
    rng_cursor: u64,
) -> Checkpoint<T> {
    // a head that never fired records its chance-level loss: ln(c_max) for
    // classification, 1.0 (variance of standardized targets) for regression
    let window_mean = |w: &VecDeque<f64>, fallback: f64| -> f64 {
        if w.is_empty() {
            fallback
        } else {
            w.iter().sum::<f64>() / w.len() as f64
        }
    };
    Checkpoint {
        weights: weights.clone(),
        model_config: *model_cfg,
        train_config: train_cfg.clone(),
        table_name: table.name.clone(),
        step,
        final_cls_loss: window_mean(cls_window, (model_cfg.c_max as f64).ln()),
        final_reg_loss: window_mean(reg_window, 1.0),
        rng_cursor,
        config_hash: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Column, ColumnKind, DomainTag};
    use crate::task::build_task_space;

    fn line_table(rows: usize) -> Table {
        // y = x exactly; a single-relationship table
        let x: Vec<f64> = (0..rows).map(|i| i as f64 / rows as f64).collect();
        let y = x.clone();
        let columns = vec![
            Column {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                values: x,
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            },
            Column {
                name: "y".into(),
                kind: ColumnKind::Numeric,
                values: y,
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            },
        ];
        Table::new("line".into(), DomainTag::DeterministicSimulated, columns, rows).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            layers: 1,
            heads: 2,
            ff_dim: 32,
            f_max: 4,
            c_max: 4,
            dropout: 0.0,
        }
    }

    fn quick_train_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_episodes: 4,
            ctx_size: 16,
            qry_size: 4,
            task_budget: 1,
            warmup_steps: steps / 20,
            peak_lr: 3e-3,
            floor_frac: 0.1,
            seed: 7,
            checkpoint_every: 0,
        }
    }

    // Known-relationship sanity oracle: a 2-column table with y = x and a
    // budget of 1 task is memorized quickly.
    #[test]
    fn memorizes_a_single_linear_task() {
        let table = line_table(64);
        let space = build_task_space(&table, 1, 7, 4).unwrap();
        let cfg = tiny_model();
        let tcfg = quick_train_cfg(500);
        let result = pretrain::<f64>(&table, &space, &cfg, &tcfg).unwrap();
        assert_eq!(result.trace.len(), 500);
        let final_reg = result.checkpoint.final_reg_loss;
        assert!(
            final_reg < 0.1,
            "regression loss after training: {final_reg}"
        );
    }

    #[test]
    fn zero_learning_rate_leaves_weights_untouched() {
        let table = line_table(64);
        let space = build_task_space(&table, 4, 7, 4).unwrap();
        let cfg = tiny_model();
        let mut tcfg = quick_train_cfg(10);
        tcfg.warmup_steps = 0;
        tcfg.peak_lr = 0.0;
        let before = Weights::<f64>::init(&cfg, tcfg.seed).unwrap();
        let result = pretrain::<f64>(&table, &space, &cfg, &tcfg).unwrap();
        assert!(result.checkpoint.weights.bitwise_eq(&before));
    }

    #[test]
    fn same_seed_reproduces_the_loss_trace_bitwise() {
        let table = line_table(64);
        let space = build_task_space(&table, 3, 9, 4).unwrap();
        let cfg = tiny_model();
        let tcfg = quick_train_cfg(25);
        let a = pretrain::<f64>(&table, &space, &cfg, &tcfg).unwrap();
        let b = pretrain::<f64>(&table, &space, &cfg, &tcfg).unwrap();
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.reg_loss.map(f64::to_bits), rb.reg_loss.map(f64::to_bits));
            assert_eq!(ra.cls_loss.map(f64::to_bits), rb.cls_loss.map(f64::to_bits));
        }
        assert!(a.checkpoint.weights.bitwise_eq(&b.checkpoint.weights));
    }

    // Degenerate task space: a constant regression target rejects every
    // episode, which must surface as a rejection storm, not a hang.
    #[test]
    fn rejection_storm_aborts_with_context() {
        let rows = 64;
        let columns = vec![
            Column {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                values: (0..rows).map(|i| i as f64).collect(),
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            },
            Column {
                name: "flat".into(),
                kind: ColumnKind::Numeric,
                values: vec![3.0; rows],
                missing: vec![false; rows],
                cardinality: None,
                labels: Vec::new(),
            },
        ];
        let table =
            Table::new("flat".into(), DomainTag::Other, columns, rows).unwrap();
        // force the single task to target the constant column
        let mut space = build_task_space(&table, 2, 1, 4).unwrap();
        space.tasks = vec![crate::task::Task {
            target: 1,
            features: 0b01,
            head: HeadKind::Regression,
        }];
        let cfg = tiny_model();
        let tcfg = quick_train_cfg(5);
        match pretrain::<f64>(&table, &space, &cfg, &tcfg) {
            Err(CoreError::RejectionStorm { rejected, window, .. }) => {
                assert!(rejected > STORM_LIMIT);
                assert_eq!(window, STORM_WINDOW);
            }
            other => panic!("expected rejection storm, got {other:?}"),
        }
    }

    #[test]
    fn learning_rate_schedule_shape() {
        let tcfg = TrainConfig {
            steps: 100,
            warmup_steps: 10,
            peak_lr: 1.0,
            floor_frac: 0.1,
            ..TrainConfig::default()
        };
        assert!((tcfg.learning_rate(9) - 1.0).abs() < 1e-12);
        assert!(tcfg.learning_rate(0) < tcfg.learning_rate(5));
        // decays monotonically after warmup, down to the floor
        let mut prev = tcfg.learning_rate(10);
        for s in 11..100 {
            let lr = tcfg.learning_rate(s);
            assert!(lr <= prev + 1e-12);
            prev = lr;
        }
        assert!(tcfg.learning_rate(99) >= 0.1 - 1e-9);
    }

    #[test]
    fn trace_file_round_trip_format() {
        let rows = vec![
            TraceRow {
                step: 0,
                cls_loss: Some(1.5),
                reg_loss: None,
                lr: 3e-4,
            },
            TraceRow {
                step: 1,
                cls_loss: None,
                reg_loss: Some(0.25),
                lr: 2.9e-4,
            },
        ];
        let dir = std::env::temp_dir().join("unitab_trace_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.csv");
        write_loss_trace(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,cls_loss,reg_loss,lr");
        assert_eq!(lines[1], "0,1.5,nan,0.0003");
        assert_eq!(lines[2], "1,nan,0.25,0.00029");
    }
}
