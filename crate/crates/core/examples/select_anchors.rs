//! Anchor selection on a hand-made polyline: RDP-seeded minimax DP against
//! uniform spacing, and what each costs in worst-case deviation.
//!
//!     cargo run --example select_anchors -- 4

use corridorflow::geometry::{dp_minimax_select, rdp_dp_select, rdp_simplify, uniform_select, Polyline};

fn main() -> corridorflow::Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);

    // a reach that hooks sharply near the end
    let pts: Vec<[f64; 3]> = (0..16)
        .map(|i| {
            let s = i as f64 / 15.0;
            let hook = if s > 0.7 { (s - 0.7) * 2.5 } else { 0.0 };
            [s, 0.2 * (3.0 * s).sin(), hook]
        })
        .collect();
    let poly = Polyline::new(pts)?;

    let exact = dp_minimax_select(&poly, k)?;
    let seeded = rdp_dp_select(&poly, k)?;
    let uniform = uniform_select(poly.len(), k)?;
    let mut kept = vec![0];
    kept.extend(uniform.indices.iter().copied().filter(|&i| i < poly.len() - 1));
    kept.push(poly.len() - 1);

    println!("K = {k} interior anchors on {} points", poly.len());
    println!("  minimax DP  {:?}  max deviation {:.5}", exact.indices, exact.objective);
    println!("  RDP + DP    {:?}  max deviation {:.5}", seeded.indices, seeded.objective);
    println!("  uniform     {:?}  max deviation {:.5}", uniform.indices, poly.approximation_error(&kept)?);

    for eps in [0.1, 0.03, 0.01] {
        let r = rdp_simplify(&poly, eps)?;
        println!("  RDP eps={eps:<5} keeps {:>2} points: {r:?}", r.len());
    }
    Ok(())
}
