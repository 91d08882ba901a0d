//! Builds every model variant at toy scale and reports geometry, parameter
//! count and the time of one forward pass.
//!
//! ```text
//! cargo run --release --example variants
//! ```

use std::time::Instant;

use fuseformer::data::{generate_sample, SyntheticSpec};
use fuseformer::layers::Params;
use fuseformer::model::{ClipTensor, Generator, ModelConfig, Variant};
use fuseformer::no_grad;

fn main() -> fuseformer::Result<()> {
    let g = generate_sample(&SyntheticSpec::toy(), 0)?;
    let clip = ClipTensor::new(g.frames, g.masks)?.cast::<f32>();
    for v in Variant::ALL {
        let cfg = ModelConfig::toy(v);
        let model = Generator::<f32>::new(&cfg)?;
        let (split, comp) = (cfg.split_geometry()?, cfg.composite_geometry()?);
        let start = Instant::now();
        let out = no_grad(|| model.forward(&clip))?;
        println!(
            "{v:<12} split k={} s={} p={}  composite k={} s={} p={}  tokens/frame={:>3}  params={:>7}  forward {:>6.1} ms  out {:?}",
            split.k,
            split.s,
            split.p,
            comp.k,
            comp.s,
            comp.p,
            cfg.tokens_per_frame()?,
            model.param_count(),
            start.elapsed().as_secs_f64() * 1e3,
            out.shape()
        );
    }
    Ok(())
}
