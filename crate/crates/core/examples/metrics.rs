//! PSNR and SSIM of a synthetic frame under increasing noise and blur.
//!
//! ```text
//! cargo run --example metrics
//! ```

use fuseformer::data::{generate_clip, SyntheticSpec};
use fuseformer::metrics::{psnr, ssim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn box_blur(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = img.to_vec();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += img[((y + dy - 1) * w + x + dx - 1) * 3 + c];
                    }
                }
                out[(y * w + x) * 3 + c] = s / 9.0;
            }
        }
    }
    out
}

fn main() -> fuseformer::Result<()> {
    let spec = SyntheticSpec::toy();
    let (h, w) = (spec.height, spec.width);
    let frame = generate_clip(&spec, 0)?.to_vec()[..h * w * 3].to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0, 0.01, 0.05, 0.1, 0.2] {
        let noisy: Vec<f64> = frame
            .iter()
            .map(|v| (v + sigma * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
            .collect();
        println!(
            "noise {sigma:<4}  psnr {:>7.2} dB  ssim {:.4}",
            psnr(&noisy, &frame, 1.0)?,
            ssim(&noisy, &frame, h, w)?
        );
    }
    let blurred = box_blur(&frame, h, w);
    println!(
        "3x3 blur    psnr {:>7.2} dB  ssim {:.4}",
        psnr(&blurred, &frame, 1.0)?,
        ssim(&blurred, &frame, h, w)?
    );
    Ok(())
}
