//! Trains a micro model for a few iterations, checkpoints it, resumes and
//! restores the weights into a fresh generator for inference.
//!
//! ```text
//! cargo run --example checkpoint -- [dir]
//! ```

use fuseformer::data::{generate_sample, ClipSample, SyntheticSpec};
use fuseformer::layers::Params;
use fuseformer::model::{ClipTensor, Generator, ModelConfig, Variant};
use fuseformer::no_grad;
use fuseformer::tensor::checkpoint;
use fuseformer::training::{CheckpointPaths, TrainConfig, Trainer};

fn main() -> fuseformer::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(std::env::temp_dir, Into::into)
        .join("fuseformer_checkpoint_demo");
    let spec = SyntheticSpec {
        t: 4,
        height: 16,
        width: 16,
        objects: 2,
        speed: (0.5, 1.0),
        ..SyntheticSpec::toy()
    };
    let g = generate_sample(&spec, 0)?;
    let data = vec![ClipSample {
        id: "demo".into(),
        clip: ClipTensor::new(g.frames, g.masks)?,
    }];
    let mcfg = ModelConfig::micro(Variant::Vif);
    let cfg = |iters| TrainConfig {
        total_iters: iters,
        clip_len: 3,
        log_wall_time: false,
        ..TrainConfig::toy()
    };

    let mut first = Trainer::<f32>::new(&mcfg, &cfg(3))?;
    first.run(&data, Some(&dir), &mut std::io::stdout())?;
    let stem = dir.join("checkpoint");
    println!("saved {}", CheckpointPaths::new(&stem).gen.display());

    let mut resumed = Trainer::<f32>::new(&mcfg, &cfg(5))?;
    resumed.resume(&stem)?;
    resumed.run(&data, Some(&dir), &mut std::io::stdout())?;

    let fresh = Generator::<f32>::new(&ModelConfig { seed: 7, ..mcfg })?;
    checkpoint::load_into(CheckpointPaths::new(&stem).gen, &fresh.named_params())?;
    let clip = data[0].clip.cast::<f32>();
    let a = no_grad(|| resumed.gen.inpaint(&clip))?.to_vec();
    let b = no_grad(|| fresh.inpaint(&clip))?.to_vec();
    println!("restored generator matches the trainer bit for bit: {}", a == b);
    Ok(())
}
