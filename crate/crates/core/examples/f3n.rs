//! Fusion feed forward versus the standard feed forward: hidden widths and
//! parameter counts, and the collapse of F3N to a wide MLP on a hard grid.
//!
//! ```text
//! cargo run --example f3n
//! ```

use fuseformer::patching::PatchGeometry;
use fuseformer::transformer::{BlockConfig, FeedForward, FfnKind};
use fuseformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fuseformer::Result<()> {
    println!(
        "{:>5} {:>3} {:>4} {:>7} {:>10} {:>10}",
        "d", "k", "c'", "hidden", "f3n", "ffn"
    );
    for (d, k) in [(64, 3), (128, 5), (256, 7), (512, 7), (768, 9)] {
        let grid = PatchGeometry::new(60, 108, 1, k, 3, k / 2)?;
        let fused = BlockConfig::new(d, 4, FfnKind::F3n, grid, None)?;
        let plain = BlockConfig::new(d, 4, FfnKind::Standard, grid, None)?;
        println!(
            "{d:>5} {k:>3} {:>4} {:>7} {:>10} {:>10}",
            fused.inner_channels().unwrap_or(0),
            fused.hidden(),
            fused.ffn_param_count(),
            plain.ffn_param_count()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = PatchGeometry::new(6, 6, 1, 3, 3, 0)?;
    let cfg = BlockConfig::new(16, 2, FfnKind::F3n, grid, Some(2))?;
    let f3n = FeedForward::<f64>::new(&cfg, &mut rng);
    let wide = FeedForward {
        kind: FfnKind::Standard,
        ..f3n.clone()
    };
    let x = Tensor::randn(&[2 * grid.token_count(), 16], 1.0, &mut rng);
    let (a, b) = (f3n.forward(&x, 2)?.to_vec(), wide.forward(&x, 2)?.to_vec());
    let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("hard inner grid: F3N vs wide MLP max difference {diff:.1e}");
    Ok(())
}
