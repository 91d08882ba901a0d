//! Soft split and soft composite on a small frame: token counts, the
//! per-pixel coverage and the round trip through the normalized composite.
//!
//! ```text
//! cargo run --example patching -- [h] [w] [k] [s] [p]
//! ```

use fuseformer::patching::{coverage_counts, normalized_composite, soft_composite, soft_split, PatchGeometry};
use fuseformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fuseformer::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let [h, w, k, s, p] = match args[..] {
        [h, w, k, s, p] => [h, w, k, s, p],
        _ => [9, 9, 5, 2, 2],
    };
    let g = PatchGeometry::new(h, w, 1, k, s, p)?;
    let (nh, nw) = g.grid();
    println!(
        "{h}x{w} frame, k={k} s={s} p={p}: {nh}x{nw} grid, {} tokens of length {}",
        g.token_count(),
        g.patch_len()
    );

    let cov = coverage_counts(&g)?;
    println!("coverage (patches per pixel):");
    for row in cov.chunks(w) {
        println!(
            "  {}",
            row.iter().map(|c| format!("{c:2}")).collect::<Vec<_>>().join(" ")
        );
    }

    let x = Tensor::<f64>::randn(&[h, w, 1], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let split = soft_split(&x, &g)?;
    let raw = soft_composite(&split)?.to_vec();
    let back = normalized_composite(&split)?.to_vec();
    let err = back
        .iter()
        .zip(x.to_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gain = raw.iter().zip(x.to_vec()).map(|(a, b)| a / b).fold(0.0, f64::max);
    println!("plain composite scales pixels by up to {gain:.1}x; normalized round trip error {err:.1e}");
    Ok(())
}
