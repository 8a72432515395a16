//! Generate a small synthetic corpus, write it as JSON lines and summarize
//! it per trajectory family.
//!
//!     cargo run --example generate_dataset -- /tmp/chunks.jsonl

use std::collections::BTreeMap;

use corridorflow::synthdata::{generate_dataset, read_dataset, write_dataset, DataConfig};

fn main() -> corridorflow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "chunks.jsonl".into());
    let cfg = DataConfig {
        n_chunks: 400,
        ..DataConfig::default()
    };
    let records = generate_dataset(&cfg, 42, 2.0)?;
    write_dataset(&out, &records)?;
    let back = read_dataset(&out)?;
    assert_eq!(back, records);

    let mut by_family: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in &records {
        let e = by_family.entry(r.context.family.as_str()).or_default();
        e.0 += 1;
        e.1 += r.delta_width;
    }
    println!("{} chunks of {} rows -> {out}", records.len(), cfg.chunk_len);
    for (fam, (n, w)) in by_family {
        println!("  {fam:<20} {n:>4} chunks, mean corridor width {:.4} m", w / n as f64);
    }
    let r = &records[0];
    println!("first chunk: anchors at {:?}, method {}", r.anchor_indices, r.anchor_method.as_str());
    Ok(())
}
