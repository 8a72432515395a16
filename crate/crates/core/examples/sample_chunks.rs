//! Euler sampling from a briefly trained model: generated chunks for a few
//! held-out contexts, with their endpoint against the demonstration.

use corridorflow::flowmatch::euler_sample;
use corridorflow::harness::{prepare_run, train, RunConfig};
use corridorflow::rng::{stream, Stream};
use corridorflow::synthdata::generate_dataset;

fn main() -> corridorflow::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.n_chunks = 800;
    cfg.train.seed = Some(4);
    cfg.train.steps = 150;
    cfg.train.eval_every = 150;
    cfg.eval.max_records = Some(5);
    let records = generate_dataset(&cfg.data, 4, cfg.corridor.alpha)?;
    let model = train(&cfg, &records, None)?.model;
    let prepared = prepare_run(&cfg, &records)?;

    let mut rng = stream(4, Stream::Sample);
    for steps in [1, 10, 50] {
        let mut err = 0.0;
        for ex in &prepared.held_out {
            let rows = euler_sample(&model, &model.norm, &ex.context, steps, model.arch.width, &mut rng)?;
            let end = rows.iter().fold([0.0; 3], |acc, r| [acc[0] + r[4], acc[1] + r[5], acc[2] + r[6]]);
            let d = [end[0] - ex.displacement[0], end[1] - ex.displacement[1], end[2] - ex.displacement[2]];
            err += corridorflow::geometry::norm(d);
        }
        println!("{steps:>3} Euler steps: mean endpoint error {:.4} m", err / prepared.held_out.len() as f64);
    }
    Ok(())
}
