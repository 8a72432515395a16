//! Finite-difference check of the combined objective on a fresh model,
//! term by term and all together.

use corridorflow::corridor::Terms;
use corridorflow::flowmatch::{draw_noise, Example, FlowModel};
use corridorflow::harness::{check_terms, prepare_run, GradCheckSettings, RunConfig};
use corridorflow::rng::{stream, Stream};
use corridorflow::synthdata::generate_dataset;

fn main() -> corridorflow::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.n_chunks = 200;
    let records = generate_dataset(&cfg.data, 3, cfg.corridor.alpha)?;
    let prepared = prepare_run(&cfg, &records)?;
    let mut model = FlowModel::new(cfg.arch(), prepared.norm, &mut stream(3, Stream::Init))?;
    let mut batch: Vec<Example> = prepared.train[..4].to_vec();
    // a tight corridor so the hinge actually fires
    for ex in &mut batch {
        ex.anchors.width *= 0.01;
    }
    let draws = draw_noise(&mut stream(3, Stream::GradCheck), batch.len(), model.arch.dim());

    let all = cfg.corridor.active_terms();
    let cases = [
        ("flow matching", Terms { fm: true, ..Terms::NONE }),
        ("anchor head", Terms { anchor: true, ..Terms::NONE }),
        ("buffer", Terms { buffer: true, ..Terms::NONE }),
        ("consistency", Terms { consistency: true, ..Terms::NONE }),
        ("total", all),
    ];
    for (name, terms) in cases {
        let r = check_terms(&mut model, &batch, &draws, &cfg.corridor, terms, GradCheckSettings::default())?;
        println!(
            "{name:<14} max rel err {:.2e} at {}[{}]  ({} coords, {} near kinks)",
            r.max_rel_err, r.worst_param, r.worst_index, r.checked, r.skipped_kinks
        );
    }
    Ok(())
}
