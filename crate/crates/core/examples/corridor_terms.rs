//! The corridor penalties on one ground-truth chunk. The buffer is silent at
//! the truth (the width is derived from it); both terms grow as the anchor
//! displacements are pushed away, and the gate shuts them off as t -> 1.

use corridorflow::corridor::{
    buffer_loss, consistency_loss, corridor_term, extract_anchors_g, CorridorConfig,
};
use corridorflow::synthdata::{generate_dataset, ChunkLayout, DataConfig, Family};

fn main() -> corridorflow::Result<()> {
    let cfg = DataConfig {
        n_chunks: 40,
        families: vec![Family::MinJerkPickPlace],
        ..DataConfig::default()
    };
    let rec = generate_dataset(&cfg, 5, 2.0)?.remove(7);
    let spec = rec.anchor_spec()?;
    let chunk = rec.chunk()?;
    let idx = &spec.indices.indices;
    println!("anchors {idx:?}, corridor width {:.4} m", spec.width);

    let g = extract_anchors_g(chunk.as_slice(), ChunkLayout::Extended, idx)?;
    println!(
        "truth: buffer {:.3e}, consistency {:.3e}",
        buffer_loss(&g, &spec.delta_targets, spec.width)?,
        consistency_loss(&g, &spec.delta_targets, &spec.weights)?
    );

    // drift every displacement column by a growing offset
    for scale in [0.5, 1.0, 2.0, 4.0] {
        let shift = scale * spec.width;
        let mut data = chunk.as_slice().to_vec();
        for row in data.chunks_mut(7) {
            row[4] += shift;
        }
        let g = extract_anchors_g(&data, ChunkLayout::Extended, idx)?;
        let gated: Vec<String> = [0.0, 0.5, 0.9, 1.0]
            .iter()
            .map(|&t| {
                let v = corridor_term(&data, ChunkLayout::Extended, &spec, t, &CorridorConfig::default()).unwrap();
                format!("t={t}: {v:.2e}")
            })
            .collect();
        println!(
            "shift {:.1}x width: buffer {:.3e}, consistency {:.3e} | gated {}",
            scale,
            buffer_loss(&g, &spec.delta_targets, spec.width)?,
            consistency_loss(&g, &spec.delta_targets, &spec.weights)?,
            gated.join(", ")
        );
    }
    Ok(())
}
