//! The nine-variant ablation on a short budget, printed as CSV.
//!
//!     cargo run --release --example ablation_suite -- 200 /tmp/ablation

use std::path::PathBuf;

use corridorflow::harness::{ablation_csv, run_ablation_suite, RunConfig};
use corridorflow::synthdata::generate_dataset;

fn main() -> corridorflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let out: Option<PathBuf> = args.next().map(PathBuf::from);

    let mut cfg = RunConfig::default();
    cfg.data.n_chunks = 1000;
    cfg.train.seed = Some(7);
    cfg.train.steps = steps;
    cfg.train.eval_every = steps.max(1);
    cfg.eval.max_records = Some(60);
    let records = generate_dataset(&cfg.data, 7, cfg.corridor.alpha)?;
    if let Some(d) = &out {
        std::fs::create_dir_all(d).map_err(|e| corridorflow::Error::io(d, e))?;
    }
    let rows = run_ablation_suite(&cfg, &records, out.as_deref())?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
