//! Overfits a toy model to one synthetic clip without the adversarial term
//! and reports the reconstruction-loss drop and the PSNR inside the hole.
//!
//! ```text
//! cargo run --release --example overfit -- [variant] [iterations] [lr]
//! ```

use std::io;

use fuseformer::data::{generate_sample, ClipSample, SyntheticSpec};
use fuseformer::metrics::evaluate;
use fuseformer::model::{ClipTensor, ModelConfig, Variant};
use fuseformer::training::{TrainConfig, Trainer};

fn main() -> fuseformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant: Variant = args.next().as_deref().unwrap_or("vif").parse()?;
    let iters = args.next().map_or(2000, |s| s.parse().expect("iterations"));
    let lr = args
        .next()
        .map_or(TrainConfig::toy().lr, |s| s.parse().expect("learning rate"));

    let spec = SyntheticSpec::toy();
    let g = generate_sample(&spec, 0)?;
    let data = vec![ClipSample {
        id: "toy".into(),
        clip: ClipTensor::new(g.frames, g.masks)?,
    }];

    let model_cfg = ModelConfig::toy(variant);
    let cfg = TrainConfig {
        lambda_adv: 0.0,
        lr,
        total_iters: iters,
        ..TrainConfig::toy()
    };
    let mut trainer = Trainer::<f32>::new(&model_cfg, &cfg)?;
    let mut log = io::sink();
    let history = trainer.run(&data, None, &mut log)?;
    for m in history.iter().step_by((iters as usize / 10).max(1)) {
        println!("{m}");
    }
    let (first, last) = (history[0].l_r, history[history.len() - 1].l_r);
    let report = evaluate(&trainer.gen, &data)?;
    let clip = &report.clips[0];
    println!(
        "{variant}: l_r {first:.5} -> {last:.5} ({:.1}x), psnr {:.2} dB, hole psnr {:.2} dB, ssim {:.4}",
        first / last,
        clip.mean_psnr(),
        clip.mean_masked_psnr().unwrap_or(f64::NAN),
        clip.mean_ssim()
    );
    Ok(())
}
