//! Train the full corridor objective for a few hundred steps, then reload
//! the checkpoint and score it on the held-out episodes.
//!
//!     cargo run --release --example train_and_eval -- 400

use corridorflow::harness::{eval_settings, evaluate, prepare_run, train, Checkpoint, RunConfig, RunPaths};
use corridorflow::synthdata::generate_dataset;

fn main() -> corridorflow::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let dir = std::env::temp_dir().join("corridorflow-train-example");
    std::fs::create_dir_all(&dir).map_err(|e| corridorflow::Error::io(&dir, e))?;

    let mut cfg = RunConfig::default();
    cfg.data.n_chunks = 1500;
    cfg.train.seed = Some(1);
    cfg.train.steps = steps;
    cfg.train.eval_every = (steps / 3).max(1);
    cfg.eval.max_records = Some(100);
    let records = generate_dataset(&cfg.data, 1, cfg.corridor.alpha)?;

    let paths = RunPaths::in_dir(&dir, &cfg);
    let run = train(&cfg, &records, Some(&paths))?;
    for line in &run.log {
        let tr = line.train.map(|t| format!("{:.3}", t.total)).unwrap_or_else(|| "-".into());
        println!(
            "step {:>5}  train {tr:>8}  endpoint {:.4}  violations {:.3}  anchor mae {:.4}",
            line.step, line.eval.endpoint_error, line.eval.corridor_violation_rate, line.eval.anchor_mae
        );
    }

    let model = Checkpoint::load(&paths.checkpoint)?.model()?;
    let prepared = prepare_run(&cfg, &records)?;
    let report = evaluate(&model, &prepared.held_out, eval_settings(&cfg)?)?;
    assert_eq!(&report, run.final_report());
    for (family, r) in &report.per_family {
        println!("  {family:<20} n={:<3} endpoint {:.4}", r.count, r.endpoint_error);
    }
    println!("checkpoint: {}", paths.checkpoint.display());
    Ok(())
}
