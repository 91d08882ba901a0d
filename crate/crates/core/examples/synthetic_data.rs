//! Renders a few synthetic clips to a directory in the on-disk layout and
//! summarises their hole masks.
//!
//! ```text
//! cargo run --example synthetic_data -- [out_dir] [clips]
//! ```

use fuseformer::data::{generate_sample, propagation_feasible, write_clip_dir, Dataset, SyntheticSpec};
use fuseformer::model::ClipTensor;

fn main() -> fuseformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic_clips".into());
    let clips = args.next().map_or(4, |s| s.parse().expect("clip count"));
    let spec = SyntheticSpec {
        clips,
        ..SyntheticSpec::toy()
    };
    for i in 0..clips {
        let g = generate_sample(&spec, i as u64)?;
        let hole = g.masks.to_vec().iter().sum::<f64>() / g.masks.numel() as f64;
        println!(
            "clip_{i:04}: {} objects, hole {:.1}% of pixels, hidden content visible elsewhere: {}",
            g.scene.objects.len(),
            100.0 * hole,
            propagation_feasible(&g.scene, &g.masks)
        );
        write_clip_dir(
            &std::path::Path::new(&out).join(format!("clip_{i:04}")),
            &ClipTensor::new(g.frames, g.masks)?,
        )?;
    }
    let ds = Dataset::open(&out)?;
    println!("{} clips written to {out}", ds.len());
    Ok(())
}
