use fuseformer::metrics::{format_db, luma, masked_psnr, psnr, ssim, ClipMetrics, MetricReport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..h * w * 3).map(|_| rng.gen()).collect()
}

/// Per-window SSIM with a full 2D kernel, no separable filtering.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (x, y) = (luma(a), luma(b));
    let mut kernel = [[0.0f64; 11]; 11];
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let z: f64 = kernel.iter().flatten().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let at = |v: &[f64], i: usize, j: usize| v[(r + i) * w + c + j];
            let wsum = |f: &dyn Fn(usize, usize) -> f64| {
                let mut s = 0.0;
                for (i, row) in kernel.iter().enumerate() {
                    for (j, k) in row.iter().enumerate() {
                        s += k / z * f(i, j);
                    }
                }
                s
            };
            let ux = wsum(&|i, j| at(&x, i, j));
            let uy = wsum(&|i, j| at(&y, i, j));
            let vx = wsum(&|i, j| (at(&x, i, j) - ux).powi(2));
            let vy = wsum(&|i, j| (at(&y, i, j) - uy).powi(2));
            let cov = wsum(&|i, j| (at(&x, i, j) - ux) * (at(&y, i, j) - uy));
            total += (2.0 * ux * uy + c1) * (2.0 * cov + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_of_a_uniform_tenth_is_twenty_db() {
    let a = image(4, 5, 1);
    let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
    assert!((psnr(&b, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert_eq!(format_db(f64::INFINITY), "inf");
    assert_eq!(format_db(20.0), "20.0000");
    assert!(psnr(&a, &a, 0.0).is_err());
    assert!(psnr(&[], &[], 1.0).is_err());
}

#[test]
fn ssim_matches_a_direct_window_sum() {
    for (h, w, seed) in [(11, 11, 1), (16, 20, 2), (23, 13, 3)] {
        let a = image(h, w, seed);
        let b: Vec<f64> = a
            .iter()
            .zip(image(h, w, seed + 10))
            .map(|(x, n)| 0.7 * x + 0.3 * n)
            .collect();
        let got = ssim(&a, &b, h, w).unwrap();
        let want = ssim_oracle(&a, &b, h, w);
        assert!((got - want).abs() < 1e-10, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn ssim_special_cases() {
    let a = image(16, 16, 4);
    assert!((ssim(&a, &a, 16, 16).unwrap() - 1.0).abs() < 1e-12);
    let flat = vec![0.25; 16 * 16 * 3];
    assert!((ssim(&flat, &flat, 16, 16).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
    assert!(ssim(&a, &neg, 16, 16).unwrap() < 1.0);
    assert!(ssim(&a[..100 * 3], &a[..100 * 3], 10, 10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), e in 0.001f64..0.2, extra in 0.001f64..0.2) {
        let a = image(3, 4, seed);
        let near: Vec<f64> = a.iter().map(|v| v + e).collect();
        let far: Vec<f64> = a.iter().map(|v| v + e + extra).collect();
        prop_assert!(psnr(&near, &a, 1.0).unwrap() > psnr(&far, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..16, w in 11usize..16) {
        let (a, b) = (image(h, w, seed), image(h, w, seed ^ 7));
        let ab = ssim(&a, &b, h, w).unwrap();
        prop_assert!((ab - ssim(&b, &a, h, w).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn masked_psnr_sees_only_the_hole(seed in any::<u64>(), noise in 0.01f64..0.5) {
        let t = image(4, 4, seed);
        let mut mask = vec![0.0; 16];
        mask[5] = 1.0;
        let mut p = t.clone();
        // Damage outside the hole only.
        for (i, v) in p.iter_mut().enumerate() {
            if i / 3 != 5 {
                *v += noise;
            }
        }
        prop_assert_eq!(masked_psnr(&p, &t, &mask, 1.0).unwrap(), f64::INFINITY);
    }
}

#[test]
fn report_has_a_line_per_frame_and_a_mean() {
    let (h, w) = (12, 12);
    let x = image(h, w, 5);
    let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
    let pred = [x.clone(), y].concat();
    let target = [x.clone(), x].concat();
    let mut masks = vec![0.0; 2 * h * w];
    masks[h * w + 3] = 1.0;
    let m = ClipMetrics::compute("a", &pred, &target, &masks, h, w).unwrap();
    assert_eq!(m.frames[0].masked_psnr, None);
    assert!((m.frames[1].masked_psnr.unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(m.mean_psnr(), f64::INFINITY);
    let text = MetricReport { clips: vec![m] }.to_string();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "clip=a frame=0 psnr=inf ssim=1.000000");
    assert!(
        lines[1].starts_with("clip=a frame=1 psnr=20.0000 ssim="),
        "{}",
        lines[1]
    );
    assert!(lines[2].starts_with("clip=a mean psnr=inf ssim="));
    assert!(ClipMetrics::compute("a", &pred, &target, &masks[..h * w], h, w).is_err());
}
