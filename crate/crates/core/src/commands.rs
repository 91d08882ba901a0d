//! The workflows behind the `fuseformer` binary.
//!
//! Every command reads its configuration from files, takes paths and an
//! optional `--seed` as flags, and writes its report to the given writer.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvFile;
use crate::data::{generate_sample, read_clip_dir, write_clip_dir, write_frames, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{self, registry, CheckOptions, Scope};
use crate::layers::Params;
use crate::metrics::evaluate;
use crate::model::{Generator, ModelConfig};
use crate::patching::{soft_composite, soft_split, PatchGeometry, PatchSet};
use crate::tensor::{checkpoint, no_grad, Element, Tensor};
use crate::training::{Precision, TrainConfig, Trainer};
use crate::transformer::{BlockConfig, FeedForward, FfnKind, MultiHeadAttention};

#[derive(Debug, Parser)]
#[command(name = "fuseformer", version, about = "Soft split / soft composite video inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset from a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a generator (and discriminator when lambda_adv > 0).
    Train {
        #[arg(long)]
        model_cfg: PathBuf,
        #[arg(long)]
        train_cfg: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint stem to continue from, e.g. `run/checkpoint`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Inpaint one clip directory and write composited frames.
    Infer {
        /// Generator weights (`<stem>.gen`).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        model_cfg: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a dataset with PSNR and SSIM.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        model_cfg: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// op, block or model; every scope when omitted.
        #[arg(long)]
        scope: Option<Scope>,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Time one operation on random input.
    Bench {
        #[arg(long, value_enum)]
        op: BenchOp,
        /// Comma-separated `key=value` list: h, w, c, k, s, p, t, d, heads.
        #[arg(long)]
        geom: String,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Decode the output of every block of a checkpoint into frames.
    InspectLayers {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        model_cfg: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Overrides the seed of the configuration files.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchOp {
    Ss,
    Sc,
    F3n,
    Msa,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Reports go to `out`, diagnostics to `err`.
pub fn run_from<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData { spec, out: dir, common } => gen_data(&spec, &dir, common.seed, out),
        Command::Train {
            model_cfg,
            train_cfg,
            data,
            out: dir,
            resume,
            common,
        } => train(&model_cfg, &train_cfg, &data, &dir, resume.as_deref(), common.seed, out),
        Command::Infer {
            ckpt,
            model_cfg,
            input,
            out: dir,
            ..
        } => infer(&ckpt, &model_cfg, &input, &dir, out),
        Command::Eval {
            ckpt,
            model_cfg,
            data,
            out: file,
            ..
        } => eval(&ckpt, &model_cfg, &data, file.as_deref(), out),
        Command::Gradcheck { scope, eps, common } => run_gradcheck(scope, eps, common.seed.unwrap_or(0), out),
        Command::Bench {
            op,
            geom,
            iters,
            common,
        } => bench(op, &geom, iters, common.seed.unwrap_or(0), out),
        Command::InspectLayers {
            ckpt,
            model_cfg,
            input,
            out: dir,
            ..
        } => inspect_layers(&ckpt, &model_cfg, &input, &dir, out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn gen_data(spec: &Path, dir: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut spec = SyntheticSpec::parse(&read_text(spec)?)?;
    if let Some(seed) = seed {
        spec.seed = seed;
        spec.mask.seed = seed;
    }
    for i in 0..spec.clips {
        let g = generate_sample(&spec, i as u64)?;
        let clip = crate::model::ClipTensor::new(g.frames, g.masks)?;
        write_clip_dir(&dir.join(format!("clip_{i:04}")), &clip)?;
    }
    writeln!(out, "clips={}", spec.clips)?;
    Ok(())
}

pub fn train(
    model_cfg: &Path,
    train_cfg: &Path,
    data: &Path,
    dir: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut mcfg = ModelConfig::parse(&read_text(model_cfg)?)?;
    let mut tcfg = TrainConfig::parse(&read_text(train_cfg)?)?;
    if let Some(seed) = seed {
        mcfg.seed = seed;
        tcfg.seed = seed;
    }
    let samples = Dataset::open(data)?.load_all()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("model.cfg"), mcfg.to_text())?;
    fs::write(dir.join("train.cfg"), tcfg.to_text())?;
    match tcfg.precision {
        Precision::F32 => train_as::<f32>(&mcfg, &tcfg, &samples, dir, resume, out),
        Precision::F64 => train_as::<f64>(&mcfg, &tcfg, &samples, dir, resume, out),
    }
}

fn train_as<T: Element>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    samples: &[crate::data::ClipSample],
    dir: &Path,
    resume: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let mut trainer = Trainer::<T>::new(mcfg, tcfg)?;
    if let Some(stem) = resume {
        trainer.resume(stem)?;
    }
    let log_path = dir.join("train.log");
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)?;
    let mut tee = Tee {
        file: io::BufWriter::new(file),
        out,
    };
    trainer.run(samples, Some(dir), &mut tee)?;
    tee.flush()?;
    Ok(())
}

struct Tee<'a, W: Write> {
    file: W,
    out: &'a mut dyn Write,
}

impl<W: Write> Write for Tee<'_, W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.file.write_all(buf)?;
        self.out.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        self.out.flush()
    }
}

/// A generator restored from `<stem>.gen` for inference.
pub fn load_generator(ckpt: &Path, model_cfg: &Path) -> Result<Generator<f64>> {
    let cfg = ModelConfig::parse(&read_text(model_cfg)?)?;
    let g = Generator::<f64>::new(&cfg)?;
    checkpoint::load_into(ckpt, &g.named_params())?;
    Ok(g)
}

fn clip_id(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn infer(ckpt: &Path, model_cfg: &Path, input: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let g = load_generator(ckpt, model_cfg)?;
    let sample = read_clip_dir(input, &clip_id(input))?;
    let frames = no_grad(|| g.inpaint(&sample.clip)).map_err(|e| Error::dataset(sample.id.as_str(), e))?;
    write_frames(dir, &frames)?;
    writeln!(out, "clip={} frames={}", sample.id, sample.clip.len())?;
    Ok(())
}

pub fn eval(ckpt: &Path, model_cfg: &Path, data: &Path, file: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let g = load_generator(ckpt, model_cfg)?;
    let report = evaluate(&g, &Dataset::open(data)?.load_all()?)?.to_string();
    if let Some(file) = file {
        fs::write(file, &report)?;
    }
    out.write_all(report.as_bytes())?;
    Ok(())
}

pub fn inspect_layers(ckpt: &Path, model_cfg: &Path, input: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let g = load_generator(ckpt, model_cfg)?;
    let sample = read_clip_dir(input, &clip_id(input))?;
    no_grad(|| -> Result<()> {
        for (i, z) in g.forward_layers(&sample.clip)?.iter().enumerate() {
            let frames = sample.clip.composite(&g.decode_intermediate(z)?)?;
            write_frames(&dir.join(format!("layer_{i:02}")), &frames)?;
            writeln!(out, "layer={i} frames={}", sample.clip.len())?;
        }
        Ok(())
    })
}

pub fn run_gradcheck(scope: Option<Scope>, eps: f64, seed: u64, out: &mut dyn Write) -> Result<()> {
    let opts = CheckOptions {
        eps,
        seed,
        ..CheckOptions::default()
    };
    opts.validate()?;
    let mut worst: Option<(String, f64)> = None;
    let mut failures = 0;
    for target in registry().into_iter().filter(|t| scope.is_none_or(|s| s == t.scope)) {
        let report = (target.run)(&opts)?;
        let w =
            gradcheck::worst(&report).ok_or_else(|| Error::Verification(format!("{} checked nothing", target.name)))?;
        let ok = w.rel_err < target.threshold;
        writeln!(
            out,
            "target={} scope={} max_rel_err={:.3e} threshold={:.0e} param={} {}",
            target.name,
            target.scope,
            w.rel_err,
            target.threshold,
            w.name,
            if ok { "ok" } else { "FAIL" }
        )?;
        if !ok {
            failures += 1;
            let ratio = w.rel_err / target.threshold;
            if worst.as_ref().is_none_or(|(_, r)| ratio > *r) {
                worst = Some((format!("{}/{} ({:.3e})", target.name, w.name, w.rel_err), ratio));
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((name, _)) => Err(Error::Verification(format!(
            "{failures} target(s) above threshold, worst {name}"
        ))),
    }
}

/// Geometry and sizes for `bench`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchGeom {
    pub geom: PatchGeometry,
    /// Frames per batch.
    pub t: usize,
    pub d: usize,
    pub heads: usize,
    /// Whether `c` was given; for F3N it then overrides `c'`.
    pub explicit_c: bool,
}

impl BenchGeom {
    /// Parses `h=60,w=108,k=7,s=3,p=3[,c=..][,t=..][,d=..][,heads=..]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut kv = KvFile::parse(&spec.replace(',', "\n"))?;
        let need = |kv: &mut KvFile, key: &str| -> Result<usize> {
            kv.take(key)?
                .ok_or_else(|| Error::Config(format!("geometry needs `{key}`")))
        };
        let (h, w) = (need(&mut kv, "h")?, need(&mut kv, "w")?);
        let (k, s, p) = (need(&mut kv, "k")?, need(&mut kv, "s")?, need(&mut kv, "p")?);
        let c: Option<usize> = kv.take("c")?;
        let t = kv.take_or("t", 1)?;
        let d = kv.take_or("d", 64)?;
        let heads = kv.take_or("heads", 4)?;
        kv.finish()?;
        if t == 0 {
            return Err(Error::Config("t must be at least 1".into()));
        }
        Ok(BenchGeom {
            geom: PatchGeometry::new(h, w, c.unwrap_or(1), k, s, p)?,
            t,
            d,
            heads,
            explicit_c: c.is_some(),
        })
    }
}

/// Mean and standard deviation of per-call wall time plus an output checksum.
#[derive(Clone, Copy, Debug)]
pub struct Timing {
    pub mean_ns: f64,
    pub std_ns: f64,
    pub checksum: f64,
}

fn time(iters: usize, mut f: impl FnMut() -> Result<Tensor<f32>>) -> Result<Timing> {
    let mut checksum = f()?.to_f64_vec().iter().sum::<f64>();
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        let y = f()?;
        samples.push(start.elapsed().as_nanos() as f64);
        checksum = y.to_f64_vec().iter().sum();
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(Timing {
        mean_ns: mean,
        std_ns: var.sqrt(),
        checksum,
    })
}

fn report(out: &mut dyn Write, op: &str, iters: usize, t: &Timing) -> Result<()> {
    writeln!(
        out,
        "op={op} iters={iters} ns_per_op={:.0} std_ns={:.0} checksum={:.6e}",
        t.mean_ns, t.std_ns, t.checksum
    )?;
    Ok(())
}

pub fn bench(op: BenchOp, geom: &str, iters: usize, seed: u64, out: &mut dyn Write) -> Result<()> {
    if iters == 0 {
        return Err(Error::Config("iters must be at least 1".into()));
    }
    let bg = BenchGeom::parse(geom)?;
    let g = bg.geom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    no_grad(|| -> Result<()> {
        match op {
            BenchOp::Ss => {
                let x = Tensor::<f32>::randn(&[bg.t, g.h, g.w, g.c], 1.0, &mut rng);
                report(out, "ss", iters, &time(iters, || Ok(soft_split(&x, &g)?.patches))?)
            }
            BenchOp::Sc => {
                let x = Tensor::<f32>::randn(&[bg.t * g.token_count(), g.patch_len()], 1.0, &mut rng);
                let ps = PatchSet::new(x, g, Some(bg.t))?;
                report(out, "sc", iters, &time(iters, || soft_composite(&ps))?)
            }
            BenchOp::F3n => {
                let c = bg.explicit_c.then_some(g.c);
                let fused = BlockConfig::new(bg.d, bg.heads, FfnKind::F3n, g, c)?;
                let plain = BlockConfig::new(bg.d, bg.heads, FfnKind::Standard, g, None)?;
                let x = Tensor::<f32>::randn(&[bg.t * g.token_count(), bg.d], 1.0, &mut rng);
                let f3n = FeedForward::new(&fused, &mut rng);
                let ffn = FeedForward::new(&plain, &mut rng);
                let a = time(iters, || f3n.forward(&x, bg.t))?;
                let b = time(iters, || ffn.forward(&x, bg.t))?;
                report(out, "f3n", iters, &a)?;
                report(out, "ffn", iters, &b)?;
                writeln!(
                    out,
                    "f3n_hidden={} ffn_hidden={} ratio={:.3}",
                    fused.hidden(),
                    plain.hidden(),
                    a.mean_ns / b.mean_ns
                )?;
                Ok(())
            }
            BenchOp::Msa => {
                if bg.heads == 0 || bg.d % bg.heads != 0 {
                    return Err(Error::Config(format!(
                        "d={} is not divisible into {} heads",
                        bg.d, bg.heads
                    )));
                }
                let m = MultiHeadAttention::new(bg.d, bg.heads, &mut rng);
                let x = Tensor::<f32>::randn(&[bg.t * g.token_count(), bg.d], 1.0, &mut rng);
                report(out, "msa", iters, &time(iters, || m.forward(&x))?)
            }
        }
    })
}
