//! Subcommand implementations. Pretrain/evaluate artifacts land under
//! `<output_dir>/<config-hash>/`; results rows accumulate in
//! `<output_dir>/results.csv`; sweeps add per-grid-point subdirectories and
//! a summary; reports emit plot-ready delimited files.

use crate::config::ExperimentConfig;
use crate::hash::config_hash;
use crate::results::{self, ResultRow};
use anyhow::{anyhow, bail, Context, Result};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use unitab_core::ablate::{ablate_table, AblationAxis};
use unitab_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use unitab_core::evaluate::{evaluate, EvalResult, Method};
use unitab_core::metafeatures::fit_meta_regressor_matrix;
use unitab_core::metrics::Metric;
use unitab_core::reference::{load_reference_records, Benchmark};
use unitab_core::table::{DomainTag, Table};
use unitab_core::task::{build_task_space, TaskSpace};
use unitab_core::trainer::{loss_trace_csv, pretrain, TrainConfig};
use unitab_core::transfer::{
    domain_matrix, pairwise_rank_correlation, rank_per_eval, TransferMatrix, SPEARMAN_BINS,
};
use unitab_core::trees::BoostParams;

/// Training precision: f32, per the desk-scale default.
type Prec = f32;

pub fn run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    Ok(cfg.output_dir.join(config_hash(cfg)?))
}

fn write_taskspace_log(path: &Path, space: &TaskSpace, hash: &str) -> Result<()> {
    let mut out = format!("# config_hash={hash}\n");
    out.push_str("index,target,feature_mask_hex,n_features,head\n");
    for (i, t) in space.tasks.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{:x},{},{}\n",
            t.target,
            t.features,
            t.feature_count(),
            match t.head {
                unitab_core::task::HeadKind::Classification => "classification",
                unitab_core::task::HeadKind::Regression => "regression",
            }
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One pretrain run: returns the checkpoint and writes artifacts into `dir`.
fn pretrain_into(
    dir: &Path,
    table: &Table,
    budget: usize,
    seed: u64,
    cfg: &ExperimentConfig,
    hash: &str,
) -> Result<Checkpoint<Prec>> {
    std::fs::create_dir_all(dir)?;
    let space = build_task_space(table, budget, seed, cfg.model.f_max)?;
    let train_cfg: TrainConfig = cfg.train.to_train_config(budget, seed);
    let result = pretrain::<Prec>(table, &space, &cfg.model, &train_cfg);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            // partial outputs are removed on failure
            let _ = std::fs::remove_dir_all(dir);
            return Err(e.into());
        }
    };
    let mut ckpt = result.checkpoint;
    ckpt.config_hash = hash.to_string();
    save_checkpoint(&ckpt, &dir.join("checkpoint.ticl"))?;
    std::fs::write(
        dir.join("loss_trace.csv"),
        format!("# config_hash={hash}\n{}", loss_trace_csv(&result.trace)),
    )?;
    write_taskspace_log(&dir.join("taskspace.csv"), &space, hash)?;
    Ok(ckpt)
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let block = cfg
        .pretrain
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [pretrain] block"))?;
    let manifest = cfg.load_manifest()?;
    let table = manifest.load_table(&block.dataset)?;
    let hash = config_hash(cfg)?;
    let dir = cfg.output_dir.join(&hash);
    pretrain_into(&dir, &table, block.task_budget, cfg.seed, cfg, &hash)?;
    println!(
        "pretrained on '{}' ({} steps, budget {}); artifacts in {}",
        block.dataset,
        cfg.train.steps,
        block.task_budget,
        dir.display()
    );
    Ok(dir)
}

fn evaluate_checkpoint_on(
    ckpt: &Checkpoint<Prec>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<EvalResult>> {
    let eval = cfg
        .eval
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [eval] block"))?;
    let manifest = cfg.load_manifest()?;
    let protocol = cfg.eval_protocol(seed);
    let baselines = cfg.baselines();
    let mut all = Vec::new();
    for name in &eval.datasets {
        let table = manifest.load_table(name)?;
        let target_col = eval_target_column(&table)?;
        let results = evaluate(ckpt, &table, target_col, &protocol, &baselines)?;
        all.extend(results);
    }
    Ok(all)
}

/// Evaluation target: the conventional last column of the table.
pub fn eval_target_column(table: &Table) -> Result<usize> {
    if table.n_cols() < 2 {
        bail!("table '{}' has fewer than 2 columns", table.name);
    }
    Ok(table.n_cols() - 1)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint_path: Option<&Path>) -> Result<usize> {
    let hash = config_hash(cfg)?;
    let ckpt_path = match checkpoint_path {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir.join(&hash).join("checkpoint.ticl"),
    };
    let ckpt: Checkpoint<Prec> = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let results = evaluate_checkpoint_on(&ckpt, cfg, cfg.seed)?;
    let rows = results::rows_from_results(&results, cfg.seed, &hash);
    results::append_rows(&cfg.output_dir.join("results.csv"), &rows)?;
    for r in &results {
        println!(
            "{:<18} {:<10} {:<9} mean {}",
            r.pretrain_table,
            r.eval_table,
            r.metric,
            r.mean.map_or("nan".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(rows.len())
}

/// Mean over evaluation tables of the matrix metric (accuracy for
/// classification targets, Pearson correlation for regression targets).
fn mean_generalization_score(results: &[EvalResult]) -> Option<f64> {
    let mut per_table: BTreeMap<&str, f64> = BTreeMap::new();
    for r in results {
        if r.method != Method::Icl {
            continue;
        }
        let wanted = matches!(r.metric, Metric::Accuracy | Metric::Pearson);
        if wanted {
            if let Some(m) = r.mean {
                per_table.insert(&r.eval_table, m);
            }
        }
    }
    (!per_table.is_empty())
        .then(|| per_table.values().sum::<f64>() / per_table.len() as f64)
}

fn mean_auc(results: &[EvalResult]) -> Option<f64> {
    let vals: Vec<f64> = results
        .iter()
        .filter(|r| r.method == Method::Icl && r.metric == Metric::AucOvr)
        .filter_map(|r| r.mean)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepGap {
    pub point: String,
    pub error: String,
}

struct SweepPoint {
    name: String,
    table: Table,
    budget: usize,
    seed: u64,
    meta: BTreeMap<&'static str, String>,
}

fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow!("config has no [sweep] block"))?;
    let manifest = cfg.load_manifest()?;
    let base_budget = cfg.pretrain.as_ref().map_or(5000, |p| p.task_budget);
    let seeds = if sweep.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        sweep.seeds.clone()
    };
    let mut points = Vec::new();
    match sweep.kind.as_str() {
        "task-budget" => {
            let block = cfg
                .pretrain
                .as_ref()
                .ok_or_else(|| anyhow!("task-budget sweep needs a [pretrain] block"))?;
            let table = manifest.load_table(&block.dataset)?;
            for &seed in &seeds {
                for &budget in &sweep.budgets {
                    let mut meta = BTreeMap::new();
                    meta.insert("budget", budget.to_string());
                    meta.insert("seed", seed.to_string());
                    points.push(SweepPoint {
                        name: format!("budget-{budget}-seed-{seed}"),
                        table: table.clone(),
                        budget,
                        seed,
                        meta,
                    });
                }
            }
        }
        "ablation" => {
            let block = cfg
                .pretrain
                .as_ref()
                .ok_or_else(|| anyhow!("ablation sweep needs a [pretrain] block"))?;
            let base = manifest.load_table(&block.dataset)?;
            for &seed in &seeds {
                // fraction 0 is axis-independent: one shared point
                let mut grid: Vec<(Option<AblationAxis>, f64)> = Vec::new();
                if sweep.fractions.contains(&0.0) {
                    grid.push((None, 0.0));
                }
                for axis_name in &sweep.axes {
                    let axis: AblationAxis = axis_name.parse()?;
                    for &f in &sweep.fractions {
                        if f > 0.0 {
                            grid.push((Some(axis), f));
                        }
                    }
                }
                for (axis, fraction) in grid {
                    let (table, axis_label) = match axis {
                        Some(a) => (ablate_table(&base, a, fraction, seed)?, a.to_string()),
                        None => (base.clone(), "none".to_string()),
                    };
                    let mut meta = BTreeMap::new();
                    meta.insert("axis", axis_label.clone());
                    meta.insert("fraction", fraction.to_string());
                    meta.insert("seed", seed.to_string());
                    points.push(SweepPoint {
                        name: format!("ablate-{axis_label}-{fraction}-seed-{seed}"),
                        table,
                        budget: base_budget,
                        seed,
                        meta,
                    });
                }
            }
        }
        "matrix" => {
            for &seed in &seeds {
                for name in &sweep.pretrain_datasets {
                    let table = manifest.load_table(name)?;
                    let mut meta = BTreeMap::new();
                    meta.insert("pretrain", name.clone());
                    meta.insert("seed", seed.to_string());
                    points.push(SweepPoint {
                        name: format!("matrix-{name}-seed-{seed}"),
                        table,
                        budget: base_budget,
                        seed,
                        meta,
                    });
                }
            }
        }
        other => bail!("unknown sweep kind '{other}'"),
    }
    Ok(points)
}

/// Runs every grid point (up to `jobs` in parallel), appends result rows in
/// grid order, writes `sweep/summary.csv` and `sweep/gaps.json`. Errors on
/// individual points are recorded as gaps; the sweep continues.
pub fn cmd_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepGap>> {
    let hash = config_hash(cfg)?;
    let sweep_dir = cfg.output_dir.join(&hash).join("sweep");
    std::fs::create_dir_all(&sweep_dir)?;
    let points = sweep_points(cfg)?;
    let jobs = jobs.max(1);

    type PointOutcome = Result<(Vec<ResultRow>, BTreeMap<&'static str, String>, Option<f64>, Option<f64>)>;
    let run_point = |point: &SweepPoint| -> PointOutcome {
        let dir = sweep_dir.join(&point.name);
        let ckpt = pretrain_into(&dir, &point.table, point.budget, point.seed, cfg, &hash)?;
        let results = evaluate_checkpoint_on(&ckpt, cfg, point.seed)?;
        let rows = results::rows_from_results(&results, point.seed, &hash);
        Ok((
            rows,
            point.meta.clone(),
            mean_auc(&results),
            mean_generalization_score(&results),
        ))
    };

    let mut outcomes: Vec<Option<PointOutcome>> = Vec::with_capacity(points.len());
    for _ in 0..points.len() {
        outcomes.push(None);
    }
    std::thread::scope(|scope| {
        let outcome_slots: Vec<_> = outcomes.iter_mut().collect();
        let mut pending: Vec<(usize, &SweepPoint, &mut Option<PointOutcome>)> = points
            .iter()
            .enumerate()
            .zip(outcome_slots)
            .map(|((i, p), slot)| (i, p, slot))
            .collect();
        while !pending.is_empty() {
            let batch: Vec<_> = pending
                .drain(..pending.len().min(jobs))
                .collect();
            let mut handles = Vec::new();
            for (i, point, slot) in batch {
                handles.push(scope.spawn(move || {
                    let out = run_point(point);
                    *slot = Some(out);
                    i
                }));
            }
            for h in handles {
                let _ = h.join();
            }
        }
    });

    let mut gaps = Vec::new();
    let mut summary = String::from("# config_hash=");
    summary.push_str(&hash);
    summary.push('\n');
    summary.push_str("point,budget,axis,fraction,pretrain,seed,mean_auc,mean_score,status\n");
    let mut all_rows = Vec::new();
    for (point, outcome) in points.iter().zip(outcomes) {
        let meta = &point.meta;
        let get = |k: &str| meta.get(k).cloned().unwrap_or_default();
        match outcome.expect("every point ran") {
            Ok((rows, _, auc, score)) => {
                all_rows.extend(rows);
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{},ok\n",
                    point.name,
                    get("budget"),
                    get("axis"),
                    get("fraction"),
                    get("pretrain"),
                    point.seed,
                    auc.map_or("nan".into(), |v| format!("{v}")),
                    score.map_or("nan".into(), |v| format!("{v}")),
                ));
            }
            Err(e) => {
                summary.push_str(&format!(
                    "{},{},{},{},{},{},nan,nan,failed\n",
                    point.name,
                    get("budget"),
                    get("axis"),
                    get("fraction"),
                    get("pretrain"),
                    point.seed,
                ));
                gaps.push(SweepGap {
                    point: point.name.clone(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    results::append_rows(&cfg.output_dir.join("results.csv"), &all_rows)?;
    std::fs::write(sweep_dir.join("summary.csv"), summary)?;
    std::fs::write(
        sweep_dir.join("gaps.json"),
        serde_json::to_string_pretty(&gaps)?,
    )?;
    println!(
        "sweep complete: {} points, {} failed; summary in {}",
        points.len(),
        gaps.len(),
        sweep_dir.join("summary.csv").display()
    );
    Ok(gaps)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

/// Builds a transfer matrix from ICL rows of a results file: cell = mean
/// over folds of accuracy (classification evals) or Pearson correlation
/// (regression evals).
pub fn matrix_from_rows(rows: &[ResultRow]) -> Result<(TransferMatrix, Vec<String>)> {
    let icl: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| !r.pretrain.starts_with("baseline-"))
        .collect();
    let mut pretrain_names: Vec<String> = icl.iter().map(|r| r.pretrain.clone()).collect();
    pretrain_names.sort();
    pretrain_names.dedup();
    let mut eval_names: Vec<String> = icl.iter().map(|r| r.eval.clone()).collect();
    eval_names.sort();
    eval_names.dedup();

    // metric per eval column: accuracy if present, else pearson
    let mut metrics = Vec::new();
    for e in &eval_names {
        let has_acc = icl
            .iter()
            .any(|r| &r.eval == e && r.metric == Metric::Accuracy.as_str());
        metrics.push(if has_acc { "accuracy" } else { "pearson" }.to_string());
    }
    let mut matrix = TransferMatrix::new(pretrain_names.clone(), eval_names.clone(), metrics.clone())?;
    for (p_idx, p) in pretrain_names.iter().enumerate() {
        for (e_idx, e) in eval_names.iter().enumerate() {
            let vals: Vec<f64> = icl
                .iter()
                .filter(|r| &r.pretrain == p && &r.eval == e && r.metric == metrics[e_idx])
                .filter_map(|r| r.value)
                .collect();
            if !vals.is_empty() {
                matrix.set(p_idx, e_idx, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }
    Ok((matrix, metrics))
}

/// Reference-table analysis: Spearman(meta-feature, score) and a boosted
/// meta-regressor over (instances, features, domain one-hots).
fn reference_report(dir: &Path, benchmark: Benchmark, split_seed: u64) -> Result<()> {
    let records: Vec<_> = load_reference_records()?
        .into_iter()
        .filter(|r| r.benchmark == benchmark)
        .collect();
    let features: Vec<f64> = records.iter().map(|r| r.n_features as f64).collect();
    let instances: Vec<f64> = records.iter().map(|r| r.n_instances as f64).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();

    let sp_features = unitab_core::metrics::spearman(&features, &scores);
    let sp_instances = unitab_core::metrics::spearman(&instances, &scores);
    let mut corr = String::from("meta_feature,spearman_with_score\n");
    corr.push_str(&format!(
        "n_features,{}\n",
        sp_features.map_or("nan".into(), |v| format!("{v}"))
    ));
    corr.push_str(&format!(
        "n_instances,{}\n",
        sp_instances.map_or("nan".into(), |v| format!("{v}"))
    ));
    write_file(&dir.join(format!("reference_{benchmark}_spearman.csv")), &corr)?;

    // boosted regressor on (instances, features, domain one-hots)
    let mut names = vec!["n_instances".to_string(), "n_features".to_string()];
    for d in DomainTag::ALL {
        names.push(format!("domain_{d}"));
    }
    let x: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut row = vec![r.n_instances as f64, r.n_features as f64];
            for d in DomainTag::ALL {
                row.push(if r.domain == d { 1.0 } else { 0.0 });
            }
            row
        })
        .collect();
    let report = fit_meta_regressor_matrix(&names, &x, &scores, split_seed, BoostParams::default())?;
    let mut imp = format!(
        "# heldout_r2={} degenerate={} train={} test={}\n",
        report.heldout_r2, report.degenerate, report.train_size, report.test_size
    );
    imp.push_str("feature,importance\n");
    for (name, v) in &report.importances {
        imp.push_str(&format!("{name},{v}\n"));
    }
    write_file(&dir.join(format!("reference_{benchmark}_importance.csv")), &imp)?;
    Ok(())
}

/// Emits the analysis files behind the rank/domain/budget figures from a
/// results directory. With `bundled`, also analyzes the published reference
/// tables (no training required).
pub fn cmd_report(
    results_dir: &Path,
    allow_mixed: bool,
    bundled: bool,
    split_seed: u64,
) -> Result<()> {
    let report_dir = results_dir.join("report");
    std::fs::create_dir_all(&report_dir)?;

    if bundled {
        reference_report(&report_dir, Benchmark::Cc18, split_seed)?;
        reference_report(&report_dir, Benchmark::Ctr23, split_seed)?;
    }

    let results_path = results_dir.join("results.csv");
    if !results_path.exists() {
        if bundled {
            println!("report written to {} (bundled tables only)", report_dir.display());
            return Ok(());
        }
        bail!("no results.csv in {}", results_dir.display());
    }
    let rows = results::read_rows(&results_path)?;
    if rows.is_empty() {
        bail!("results file is empty");
    }
    let mut hashes: Vec<&str> = rows.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.sort();
    hashes.dedup();
    if hashes.len() > 1 && !allow_mixed {
        bail!(
            "results mix {} config hashes ({:?}); pass --allow-mixed to combine them",
            hashes.len(),
            hashes
        );
    }

    let (matrix, _) = matrix_from_rows(&rows)?;

    // transfer matrix dump
    let mut mat_csv = String::from("pretrain,eval,metric,score\n");
    for p in 0..matrix.n_pretrain() {
        for e in 0..matrix.n_eval() {
            mat_csv.push_str(&format!(
                "{},{},{},{}\n",
                matrix.pretrain_names[p],
                matrix.eval_names[e],
                matrix.eval_metrics[e],
                matrix.get(p, e).map_or("nan".into(), |v| format!("{v}"))
            ));
        }
    }
    write_file(&report_dir.join("transfer_matrix.csv"), &mat_csv)?;

    // pairwise rank correlations + histogram
    if matrix.n_pretrain() >= 2 {
        let ranks = rank_per_eval(&matrix)?;
        let pw = pairwise_rank_correlation(&ranks);
        let mut pairs_csv = format!("# skipped_pairs={}\n", pw.skipped);
        pairs_csv.push_str("eval_a,eval_b,spearman\n");
        for &(i, j, rho) in &pw.pairs {
            pairs_csv.push_str(&format!(
                "{},{},{rho}\n",
                matrix.eval_names[i], matrix.eval_names[j]
            ));
        }
        write_file(&report_dir.join("spearman_pairs.csv"), &pairs_csv)?;

        let mut hist_csv = String::from("bin_lo,bin_hi,count\n");
        for (b, count) in pw.histogram.iter().enumerate() {
            let lo = -1.0 + b as f64 * 0.1;
            hist_csv.push_str(&format!("{lo:.1},{:.1},{count}\n", lo + 0.1));
        }
        write_file(&report_dir.join("rank_histogram.csv"), &hist_csv)?;

        // domain-to-domain average ranks (domains from the demo manifest
        // naming convention are not recoverable from names alone, so the
        // caller supplies tables via the manifest when available)
    } else {
        write_file(
            &report_dir.join("spearman_pairs.csv"),
            "# fewer than 2 pre-training datasets: no rank pairs to correlate\neval_a,eval_b,spearman\n",
        )?;
    }

    println!("report written to {}", report_dir.display());
    Ok(())
}

/// Domain-matrix report, which needs domain tags from the manifest.
pub fn domain_report(
    results_dir: &Path,
    manifest: &unitab_core::manifest::Manifest,
) -> Result<()> {
    let rows = results::read_rows(&results_dir.join("results.csv"))?;
    let (matrix, _) = matrix_from_rows(&rows)?;
    if matrix.n_pretrain() < 2 {
        return Ok(());
    }
    let domain_of = |name: &str| -> Result<DomainTag> {
        Ok(manifest.entry(name).map(|e| e.domain)?)
    };
    let pretrain_domains: Vec<DomainTag> = matrix
        .pretrain_names
        .iter()
        .map(|n| domain_of(n))
        .collect::<Result<_>>()?;
    let eval_domains: Vec<DomainTag> = matrix
        .eval_names
        .iter()
        .map(|n| domain_of(n))
        .collect::<Result<_>>()?;
    let grid = domain_matrix(&matrix, &pretrain_domains, &eval_domains)?;
    let mut csv = String::from("train_domain,eval_domain,mean_rank,count\n");
    for (t, td) in grid.train_domains.iter().enumerate() {
        for (e, ed) in grid.eval_domains.iter().enumerate() {
            let (mean, count) = grid.cell(t, e);
            csv.push_str(&format!(
                "{td},{ed},{},{count}\n",
                mean.map_or("nan".into(), |v| format!("{v}"))
            ));
        }
    }
    write_file(&results_dir.join("report").join("domain_matrix.csv"), &csv)?;
    Ok(())
}

/// Budget-vs-score file from a sweep summary.
pub fn budget_report(results_dir: &Path, hash: &str) -> Result<()> {
    let summary_path = results_dir.join(hash).join("sweep").join("summary.csv");
    if !summary_path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&summary_path)?;
    let mut out = String::from("budget,seed,mean_auc\n");
    for line in text.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 9 && !f[1].is_empty() && f[8] == "ok" {
            out.push_str(&format!("{},{},{}\n", f[1], f[5], f[6]));
        }
    }
    write_file(&results_dir.join("report").join("budget_vs_score.csv"), &out)?;
    Ok(())
}

fn sanity_check_histogram_bins() -> bool {
    SPEARMAN_BINS == 20
}

/// Quick oracle/invariant suite; prints one line per check.
pub fn cmd_selftest() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    check("histogram-bins", sanity_check_histogram_bins());

    // gradients of a small composite graph vs finite differences
    {
        use unitab_core::gradcheck::grad_check;
        use unitab_core::tensor::Tensor;
        let params = vec![
            Tensor::from_vec(vec![3, 3], (0..9).map(|i| 0.1 * i as f64 - 0.4).collect()).unwrap(),
            Tensor::from_vec(vec![3], vec![0.2, -0.1, 0.05]).unwrap(),
        ];
        let err = grad_check(
            |tape, p| {
                let x = Tensor::from_vec(vec![2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.7]).unwrap();
                let h = tape.matmul(&x, &p[0])?;
                let hb = tape.add_bias(&h, &p[1])?;
                let s = tape.softmax_lastdim(&hb)?;
                let g = tape.gelu(&s)?;
                tape.mean(&g)
            },
            &params,
            32,
            7,
        )?;
        check("gradcheck-composite", err < 1e-6);
    }

    // task counting vs brute force for k <= 10
    {
        use unitab_core::task::count_tasks;
        let mut ok = true;
        for k in 2..=10usize {
            let idx: Vec<usize> = (0..k).collect();
            let mut brute = 0u64;
            for _t in 0..k {
                brute += (1u64 << (k - 1)) - 1;
            }
            ok &= count_tasks(k, &idx) == brute;
        }
        check("task-count-enumeration", ok);
    }

    // AUC vs exhaustive pair counting on random instances
    {
        use rand::Rng;
        use unitab_core::metrics::auc_binary;
        let mut stream = unitab_core::rng::stream(99, &[unitab_core::rng::tag("selftest")]);
        let mut ok = true;
        for _ in 0..200 {
            let n = stream.gen_range(2..10);
            let scores: Vec<f64> = (0..n).map(|_| stream.gen_range(0..4) as f64).collect();
            let labels: Vec<bool> = (0..n).map(|_| stream.gen()).collect();
            let n_pos = labels.iter().filter(|&&l| l).count();
            if n_pos == 0 || n_pos == n {
                continue;
            }
            let mut credit = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        pairs += 1.0;
                        credit += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            let want = credit / pairs;
            let got = auc_binary(&scores, &labels).unwrap();
            ok &= (got - want).abs() < 1e-12;
        }
        check("auc-pairwise-oracle", ok);
    }

    // episode invariants on the bundled wide table
    {
        use unitab_core::episode::build_episode;
        use unitab_core::task::build_task_space;
        let table = unitab_core::synth::campus();
        let space = build_task_space(&table, 50, 3, 32)?;
        let mut ok = true;
        for (i, task) in space.tasks.iter().enumerate().take(20) {
            let mut stream =
                unitab_core::rng::stream(5, &[unitab_core::rng::tag("stepisod"), i as u64]);
            match build_episode::<f64>(&table, task, 64, 16, &mut stream, 32, 10) {
                Ok(ep) => {
                    ok &= ep.ctx_x.values().iter().all(|v| v.is_finite());
                    let f = 32;
                    for row in ep.ctx_x.values().chunks(f) {
                        ok &= row[ep.active_features..].iter().all(|&v| v == 0.0);
                    }
                }
                Err(unitab_core::CoreError::EpisodeRejected(_)) => {}
                Err(_) => ok = false,
            }
        }
        check("episode-invariants", ok);
    }

    // attention mask invariants on a tiny model
    {
        use unitab_core::episode::{Episode, EpisodeTargets};
        use unitab_core::model::{forward, ModelConfig, Weights};
        use unitab_core::task::HeadKind;
        use unitab_core::tensor::Tensor;
        let cfg = ModelConfig::tiny();
        let w = Weights::<f64>::init_with_random_heads(&cfg, 11)?;
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|r| (0..cfg.f_max).map(|c| ((r * 3 + c) % 5) as f64 - 2.0).collect())
            .collect();
        let ep = Episode {
            head: HeadKind::Classification,
            ctx_x: Tensor::from_rows(&rows[..6]).unwrap(),
            qry_x: Tensor::from_rows(&rows[6..]).unwrap(),
            ctx_y: EpisodeTargets::Classes(vec![0, 1, 0, 1, 0, 1]),
            qry_y: EpisodeTargets::Classes(vec![0, 1]),
            active_features: cfg.f_max,
            n_classes: 2,
            target_mean: 0.0,
            target_std: 1.0,
        };
        let mut tape = unitab_core::tape::Tape::inference();
        let full = forward(&mut tape, &w, &cfg, &ep)?;
        let mut solo = ep.clone();
        solo.qry_x = Tensor::from_rows(&rows[6..7]).unwrap();
        solo.qry_y = EpisodeTargets::Classes(vec![0]);
        let mut tape2 = unitab_core::tape::Tape::inference();
        let single = forward(&mut tape2, &w, &cfg, &solo)?;
        let ok = full.cls_logits.values()[..cfg.c_max]
            .iter()
            .zip(single.cls_logits.values())
            .all(|(a, b)| (a - b).abs() <= 1e-10);
        check("query-independence", ok);
    }

    // checkpoint round trip
    {
        use unitab_core::checkpoint::{checkpoint_bytes, load_checkpoint_bytes, Checkpoint};
        use unitab_core::model::{ModelConfig, Weights};
        let cfg = ModelConfig::tiny();
        let ckpt = Checkpoint {
            weights: Weights::<f32>::init(&cfg, 2)?,
            model_config: cfg,
            train_config: TrainConfig::default(),
            table_name: "selftest".into(),
            step: 1,
            final_cls_loss: 1.0,
            final_reg_loss: 1.0,
            rng_cursor: 8,
            config_hash: "selftest".into(),
        };
        let bytes = checkpoint_bytes(&ckpt)?;
        let back: Checkpoint<f32> = load_checkpoint_bytes(&bytes)?;
        check("checkpoint-roundtrip", back.weights.bitwise_eq(&ckpt.weights));
    }

    if failures > 0 {
        bail!("{failures} selftest check(s) failed");
    }
    println!("selftest: all checks passed");
    Ok(())
}
