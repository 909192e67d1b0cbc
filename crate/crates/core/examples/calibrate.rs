use std::time::Instant;
use unitab_core::checkpoint::Checkpoint;
use unitab_core::evaluate::{evaluate, EvalProtocol, Method};
use unitab_core::metrics::Metric;
use unitab_core::model::ModelConfig;
use unitab_core::synth;
use unitab_core::task::build_task_space;
use unitab_core::trainer::{pretrain, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let embed: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let layers: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let budget: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5000);
    let ctx: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(128);
    let seed: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(42);
    let lr: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(3e-4);

    let campus = synth::campus();
    let model_cfg = ModelConfig {
        embed_dim: embed,
        layers,
        heads: 4,
        ff_dim: embed * 2,
        f_max: 32,
        c_max: 10,
        dropout: 0.0,
    };
    let train_cfg = TrainConfig {
        steps,
        batch_episodes: 8,
        ctx_size: ctx,
        qry_size: 32,
        task_budget: budget,
        warmup_steps: steps / 20,
        peak_lr: lr,
        floor_frac: 0.1,
        seed,
        checkpoint_every: 0,
    };
    let space = build_task_space(&campus, budget, seed, model_cfg.f_max).unwrap();
    eprintln!("task space: {} tasks (total {})", space.tasks.len(), space.total_tasks);

    let t0 = Instant::now();
    let result = pretrain::<f32>(&campus, &space, &model_cfg, &train_cfg).unwrap();
    let train_time = t0.elapsed().as_secs_f64();
    let trace = &result.trace;
    let early: f64 = trace.iter().take(50).filter_map(|r| r.cls_loss).sum::<f64>()
        / trace.iter().take(50).filter(|r| r.cls_loss.is_some()).count().max(1) as f64;
    eprintln!(
        "trained {} steps in {:.1}s ({:.2} s/step); cls loss {:.3} -> {:.3}, reg loss -> {:.3}",
        steps,
        train_time,
        train_time / steps as f64,
        early,
        result.checkpoint.final_cls_loss,
        result.checkpoint.final_reg_loss
    );

    let ckpt: Checkpoint<f32> = result.checkpoint;
    let protocol = EvalProtocol { seed: 1, ..EvalProtocol::default() };
    let t1 = Instant::now();
    let mut aucs = Vec::new();
    for table in [synth::orchard(), synth::turbines(), synth::clinics(), synth::galaxies()] {
        let target = table.n_cols() - 1;
        let results = evaluate(&ckpt, &table, target, &protocol, &[Method::Forest]).unwrap();
        for r in &results {
            if r.metric == Metric::AucOvr {
                eprintln!("  {} [{:?}]: AUC {:?}", table.name, r.method, r.mean);
                if r.method == Method::Icl {
                    aucs.push(r.mean.unwrap_or(0.5));
                }
            }
        }
    }
    eprintln!(
        "eval time {:.1}s; mean AUC {:.3}",
        t1.elapsed().as_secs_f64(),
        aucs.iter().sum::<f64>() / aucs.len() as f64
    );
}
