//! Losses, Adam and the alternating generator/discriminator loop.
//!
//! Each iteration samples `t` frames of one clip, takes a generator step on
//! `λ_R·L_R + λ_adv·L_adv` and, when `λ_adv > 0`, a discriminator step on
//! `L_D`. Every iteration appends one line to the metrics log:
//!
//! ```text
//! iter=<u64> l_r=<f> l_adv=<f> l_d=<f> lr=<f> ms=<f>
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{render, KvFile};
use crate::data::ClipSample;
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::model::{ClipTensor, Discriminator, Generator, ModelConfig};
use crate::tensor::checkpoint::{self, NamedTensor};
use crate::tensor::{Element, Tensor};

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside logarithms.
pub const CLAMP: f64 = 1e-7;

/// Mean absolute error over all elements.
pub fn recon_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("recon_loss", pred.shape(), target.shape()));
    }
    Ok(pred.sub(target)?.abs().mean())
}

fn check_probability<T: Element>(op: &'static str, p: &Tensor<T>) -> Result<()> {
    if p.numel() != 1 {
        return Err(Error::shape(op, p.shape(), &[]));
    }
    let v = p.item().as_f64();
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain {
            op,
            detail: format!("discriminator output {v} outside [0, 1]"),
        });
    }
    Ok(())
}

/// `−[log d_real + log(1 − d_fake)]`.
pub fn disc_loss<T: Element>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_probability("disc_loss", d_real)?;
    check_probability("disc_loss", d_fake)?;
    let real = d_real.clamp(CLAMP, 1.0 - CLAMP).log()?;
    let fake = d_fake.clamp(CLAMP, 1.0 - CLAMP).neg().add_scalar(1.0).log()?;
    Ok(real.add(&fake)?.neg())
}

/// `−log d_fake`.
pub fn gen_adv_loss<T: Element>(d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_probability("gen_adv_loss", d_fake)?;
    Ok(d_fake.clamp(CLAMP, 1.0 - CLAMP).log()?.neg())
}

pub fn total_loss<T: Element>(recon: &Tensor<T>, adv: &Tensor<T>, cfg: &TrainConfig) -> Result<Tensor<T>> {
    recon.scale(cfg.lambda_r).add(&adv.scale(cfg.lambda_adv))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for each parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Element> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &[(String, Tensor<T>)]) -> Self {
        let zeros = |p: &Tensor<T>| vec![T::zero(); p.numel()];
        OptimizerState {
            step: 0,
            m: params.iter().map(|(_, p)| zeros(p)).collect(),
            v: params.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    /// Moments as `<name>.m` / `<name>.v` tensors.
    pub fn to_named(&self, params: &[(String, Tensor<T>)]) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (i, (name, p)) in params.iter().enumerate() {
            for (suffix, buf) in [("m", &self.m[i]), ("v", &self.v[i])] {
                out.push(NamedTensor {
                    name: format!("{name}.{suffix}"),
                    shape: p.shape().to_vec(),
                    data: buf.iter().map(|x| x.as_f64() as f32).collect(),
                });
            }
        }
        out
    }

    pub fn from_named(params: &[(String, Tensor<T>)], step: u64, entries: Vec<NamedTensor>) -> Result<Self> {
        let moments: Vec<(String, Tensor<T>)> = params
            .iter()
            .flat_map(|(name, p)| ["m", "v"].map(|s| (format!("{name}.{s}"), Tensor::zeros(p.shape()).into_param())))
            .collect();
        checkpoint::assign(&moments, entries)?;
        let mut state = OptimizerState::new(params);
        state.step = step;
        for (i, pair) in moments.chunks(2).enumerate() {
            state.m[i] = pair[0].1.to_vec();
            state.v[i] = pair[1].1.to_vec();
        }
        Ok(state)
    }
}

/// One bias-corrected Adam update of every parameter from its gradient.
/// Parameters without a gradient are treated as having a zero gradient.
pub fn adam_step<T: Element>(
    params: &[(String, Tensor<T>)],
    state: &mut OptimizerState<T>,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let step = state.step as i32;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let c1 = T::lit(1.0 - hyper.beta1.powi(step));
    let c2 = T::lit(1.0 - hyper.beta2.powi(step));
    let (lr, eps, one) = (T::lit(lr), T::lit(hyper.eps), T::one());
    for (i, (name, p)) in params.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != p.numel() {
            return Err(Error::Checkpoint {
                name: name.clone(),
                detail: format!("optimizer moment has {} entries, parameter {}", m.len(), p.numel()),
            });
        }
        let grad = p.grad();
        p.update_data(|data| {
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision `{s}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_r: f64,
    pub lambda_adv: f64,
    pub lr: f64,
    /// Iterations after which the learning rate is multiplied by 0.1.
    pub lr_drop_iters: Vec<u64>,
    pub total_iters: u64,
    /// Frames sampled per clip.
    pub clip_len: usize,
    /// Clips per iteration; losses are averaged over them.
    pub batch: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub precision: Precision,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub ckpt_every: u64,
    /// Record wall-clock milliseconds in the log; when off the column is 0
    /// and logs are byte-reproducible.
    pub log_wall_time: bool,
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn toy() -> Self {
        TrainConfig {
            lambda_r: 1.0,
            lambda_adv: 0.01,
            lr: 1e-3,
            lr_drop_iters: Vec::new(),
            total_iters: 2000,
            clip_len: 5,
            batch: 1,
            adam: AdamHyper::default(),
            seed: 0,
            precision: Precision::F32,
            ckpt_every: 0,
            log_wall_time: true,
        }
    }

    /// 500k iterations from lr 0.01, dropped ×0.1 at 400k and 450k.
    pub fn full() -> Self {
        TrainConfig {
            lr: 0.01,
            lr_drop_iters: vec![400_000, 450_000],
            total_iters: 500_000,
            ckpt_every: 10_000,
            ..TrainConfig::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_r > 0.0 && self.lambda_adv >= 0.0 && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "need lambda_r > 0, lambda_adv >= 0, lr > 0 (got {}, {}, {})",
                self.lambda_r, self.lambda_adv, self.lr
            )));
        }
        if self.clip_len == 0 || self.batch == 0 {
            return Err(Error::Config("clip_len and batch must be positive".into()));
        }
        let AdamHyper { beta1, beta2, eps } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
            return Err(Error::Config(format!("bad Adam hyperparameters {:?}", self.adam)));
        }
        Ok(())
    }

    /// Learning rate in force at iteration `iter` (1-based).
    pub fn lr_at(&self, iter: u64) -> f64 {
        let drops = self.lr_drop_iters.iter().filter(|&&d| iter > d).count();
        self.lr * 0.1f64.powi(drops as i32)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let base = match kv.take::<String>("preset")?.as_deref() {
            None | Some("toy") => TrainConfig::toy(),
            Some("full") => TrainConfig::full(),
            Some(other) => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        let cfg = TrainConfig {
            lambda_r: kv.take_or("lambda_r", base.lambda_r)?,
            lambda_adv: kv.take_or("lambda_adv", base.lambda_adv)?,
            lr: kv.take_or("lr", base.lr)?,
            lr_drop_iters: kv.take_list("lr_drop_iters")?.unwrap_or(base.lr_drop_iters),
            total_iters: kv.take_or("total_iters", base.total_iters)?,
            clip_len: kv.take_or("clip_len", base.clip_len)?,
            batch: kv.take_or("batch", base.batch)?,
            adam: AdamHyper {
                beta1: kv.take_or("beta1", base.adam.beta1)?,
                beta2: kv.take_or("beta2", base.adam.beta2)?,
                eps: kv.take_or("adam_eps", base.adam.eps)?,
            },
            seed: kv.take_or("seed", base.seed)?,
            precision: kv.take_or("precision", base.precision)?,
            ckpt_every: kv.take_or("ckpt_every", base.ckpt_every)?,
            log_wall_time: kv.take_or("log_wall_time", base.log_wall_time)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let drops: Vec<String> = self.lr_drop_iters.iter().map(u64::to_string).collect();
        render(&[
            ("lambda_r", self.lambda_r.to_string()),
            ("lambda_adv", self.lambda_adv.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_drop_iters", drops.join(", ")),
            ("total_iters", self.total_iters.to_string()),
            ("clip_len", self.clip_len.to_string()),
            ("batch", self.batch.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("ckpt_every", self.ckpt_every.to_string()),
            ("log_wall_time", self.log_wall_time.to_string()),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub iter: u64,
    pub l_r: f64,
    pub l_adv: f64,
    pub l_d: f64,
    pub lr: f64,
    pub ms: f64,
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} l_r={} l_adv={} l_d={} lr={} ms={}",
            self.iter, self.l_r, self.l_adv, self.l_d, self.lr, self.ms
        )
    }
}

/// Paths of the files making up one checkpoint `<stem>`.
#[derive(Clone, Debug)]
pub struct CheckpointPaths {
    pub gen: PathBuf,
    pub disc: PathBuf,
    pub gen_adam: PathBuf,
    pub disc_adam: PathBuf,
    pub state: PathBuf,
}

impl CheckpointPaths {
    pub fn new(stem: &Path) -> Self {
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        CheckpointPaths {
            gen: with(".gen"),
            disc: with(".disc"),
            gen_adam: with(".gen.adam"),
            disc_adam: with(".disc.adam"),
            state: with(".state"),
        }
    }
}

/// Generator, optional discriminator and their optimizers.
pub struct Trainer<T: Element> {
    pub model_cfg: ModelConfig,
    pub cfg: TrainConfig,
    pub gen: Generator<T>,
    pub disc: Option<Discriminator<T>>,
    gen_params: Vec<(String, Tensor<T>)>,
    disc_params: Vec<(String, Tensor<T>)>,
    gen_opt: OptimizerState<T>,
    disc_opt: OptimizerState<T>,
    /// Iterations completed so far.
    pub iter: u64,
}

impl<T: Element> Trainer<T> {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::new(model_cfg)?;
        let disc = if cfg.lambda_adv > 0.0 {
            if !model_cfg.discriminator {
                return Err(Error::Config("lambda_adv > 0 needs discriminator = true".into()));
            }
            Some(Discriminator::new(model_cfg))
        } else {
            None
        };
        let gen_params = gen.named_params();
        let disc_params = disc.as_ref().map(|d| d.named_params()).unwrap_or_default();
        Ok(Trainer {
            model_cfg: model_cfg.clone(),
            cfg: cfg.clone(),
            gen_opt: OptimizerState::new(&gen_params),
            disc_opt: OptimizerState::new(&disc_params),
            gen,
            disc,
            gen_params,
            disc_params,
            iter: 0,
        })
    }

    /// `clip_len` frames of one clip, chosen by a generator seeded from
    /// `(seed, iteration)` so resumed runs draw the same samples.
    pub fn sample(&self, data: &[ClipSample], iter: u64) -> Result<(String, ClipTensor<T>)> {
        if data.is_empty() {
            return Err(Error::Config("training needs at least one clip".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(iter);
        let s = &data[rng.gen_range(0..data.len())];
        let t = s.clip.len();
        let want = self.cfg.clip_len;
        if t < want {
            return Err(Error::dataset(s.id.as_str(), format!("has {t} frames, need {want}")));
        }
        let mut idx = sample(&mut rng, t, want).into_vec();
        idx.sort_unstable();
        let pick = |x: &Tensor<f64>| -> Result<Tensor<T>> {
            let parts = idx.iter().map(|&i| x.narrow(0, i, 1)).collect::<Result<Vec<_>>>()?;
            Ok(Tensor::concat(&parts, 0)?.cast())
        };
        let clip = ClipTensor::new(pick(&s.clip.frames)?, pick(&s.clip.masks)?)
            .map_err(|e| Error::dataset(s.id.as_str(), e))?;
        Ok((s.id.clone(), clip))
    }

    /// One generator step and, with an adversarial term, one discriminator
    /// step, each averaged over `clips`.
    pub fn step(&mut self, clips: &[ClipTensor<T>]) -> Result<StepMetrics> {
        let start = Instant::now();
        let iter = self.iter + 1;
        let lr = self.cfg.lr_at(iter);
        let (l_r, l_adv, outputs) = self.gen_step(clips, lr)?;
        let l_d = self.disc_step(clips, &outputs, lr)?;
        self.iter = iter;
        let ms = if self.cfg.log_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok(StepMetrics {
            iter,
            l_r,
            l_adv,
            l_d,
            lr,
            ms,
        })
    }

    /// Updates the generator only. Returns the mean reconstruction and
    /// adversarial losses and the detached outputs.
    pub fn gen_step(&mut self, clips: &[ClipTensor<T>], lr: f64) -> Result<(f64, f64, Vec<Tensor<T>>)> {
        let scale = 1.0 / clips.len() as f64;
        let (mut l_r, mut l_adv) = (0.0, 0.0);
        self.gen.zero_grad();
        let mut outputs = Vec::with_capacity(clips.len());
        for clip in clips {
            let out = self.gen.forward(clip)?;
            let recon = recon_loss(&out, &clip.frames)?;
            let adv = match &self.disc {
                Some(d) => gen_adv_loss(&d.forward(&out)?)?,
                None => Tensor::scalar(T::zero()),
            };
            total_loss(&recon, &adv, &self.cfg)?.scale(scale).backward()?;
            l_r += recon.item().as_f64() * scale;
            l_adv += adv.item().as_f64() * scale;
            outputs.push(out.detach());
        }
        adam_step(&self.gen_params, &mut self.gen_opt, lr, &self.cfg.adam)?;
        Ok((l_r, l_adv, outputs))
    }

    /// Updates the discriminator only, on real `clips` against `fakes`.
    /// Returns the mean discriminator loss, 0 without a discriminator.
    pub fn disc_step(&mut self, clips: &[ClipTensor<T>], fakes: &[Tensor<T>], lr: f64) -> Result<f64> {
        let Some(d) = &self.disc else { return Ok(0.0) };
        let scale = 1.0 / clips.len() as f64;
        let mut l_d = 0.0;
        d.zero_grad();
        for (clip, fake) in clips.iter().zip(fakes) {
            let loss = disc_loss(&d.forward(&clip.frames)?, &d.forward(fake)?)?;
            loss.scale(scale).backward()?;
            l_d += loss.item().as_f64() * scale;
        }
        adam_step(&self.disc_params, &mut self.disc_opt, lr, &self.cfg.adam)?;
        Ok(l_d)
    }

    /// Trains until `total_iters`, writing one log line per iteration and,
    /// when `out` is given, checkpoints `out/checkpoint.*`.
    pub fn run(&mut self, data: &[ClipSample], out: Option<&Path>, log: &mut dyn Write) -> Result<Vec<StepMetrics>> {
        let mut history = Vec::new();
        while self.iter < self.cfg.total_iters {
            let next = self.iter + 1;
            let mut batch = Vec::with_capacity(self.cfg.batch);
            let mut ids = Vec::with_capacity(self.cfg.batch);
            for b in 0..self.cfg.batch as u64 {
                let (id, clip) = self.sample(data, next * self.cfg.batch as u64 + b)?;
                ids.push(id);
                batch.push(clip);
            }
            let m = self.step(&batch).map_err(|e| match e {
                Error::Dataset { .. } => e,
                other => Error::dataset(ids.join(","), other),
            })?;
            writeln!(log, "{m}")?;
            history.push(m);
            if let Some(dir) = out {
                let periodic = self.cfg.ckpt_every > 0 && self.iter.is_multiple_of(self.cfg.ckpt_every);
                if periodic || self.iter == self.cfg.total_iters {
                    self.save(&dir.join("checkpoint"))?;
                }
            }
        }
        log.flush()?;
        Ok(history)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let p = CheckpointPaths::new(stem);
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        checkpoint::save(&p.gen, &self.gen_params)?;
        fs::write(
            &p.gen_adam,
            checkpoint::encode(&self.gen_opt.to_named(&self.gen_params)),
        )?;
        if self.disc.is_some() {
            checkpoint::save(&p.disc, &self.disc_params)?;
            fs::write(
                &p.disc_adam,
                checkpoint::encode(&self.disc_opt.to_named(&self.disc_params)),
            )?;
        }
        let state = render(&[
            ("iter", self.iter.to_string()),
            ("gen_adam_step", self.gen_opt.step.to_string()),
            ("disc_adam_step", self.disc_opt.step.to_string()),
        ]);
        fs::write(&p.state, state)?;
        Ok(())
    }

    /// Restores weights, optimizer moments and the iteration counter.
    pub fn resume(&mut self, stem: &Path) -> Result<()> {
        let p = CheckpointPaths::new(stem);
        let mut kv = KvFile::parse(&fs::read_to_string(&p.state)?)?;
        let iter = kv
            .take("iter")?
            .ok_or_else(|| Error::Format("state file lacks `iter`".into()))?;
        let gen_step = kv.take_or("gen_adam_step", iter)?;
        let disc_step = kv.take_or("disc_adam_step", 0)?;
        kv.finish()?;
        checkpoint::load_into(&p.gen, &self.gen_params)?;
        self.gen_opt =
            OptimizerState::from_named(&self.gen_params, gen_step, checkpoint::decode(&fs::read(&p.gen_adam)?)?)?;
        if self.disc.is_some() {
            checkpoint::load_into(&p.disc, &self.disc_params)?;
            self.disc_opt = OptimizerState::from_named(
                &self.disc_params,
                disc_step,
                checkpoint::decode(&fs::read(&p.disc_adam)?)?,
            )?;
        }
        self.iter = iter;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn recon_values() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(recon_loss(&a, &a).unwrap().item(), 0.0);
        let z = Tensor::<f64>::zeros(&[3]);
        assert_eq!(recon_loss(&z, &Tensor::ones(&[3])).unwrap().item(), 1.0);
        assert!(recon_loss(&z, &Tensor::ones(&[4])).is_err());
    }

    #[test]
    fn adversarial_values() {
        let half = disc_loss(&s(0.5), &s(0.5)).unwrap().item();
        assert!((half - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(disc_loss(&s(1.0), &s(0.0)).unwrap().item() < 1e-6);
        assert!((gen_adv_loss(&s(0.5)).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        assert!(gen_adv_loss(&s(1.0)).unwrap().item() < 1e-6);
        assert!(gen_adv_loss(&s(1.5)).is_err());
        assert!(disc_loss(&s(-0.1), &s(0.5)).is_err());
    }

    #[test]
    fn weighted_total() {
        let cfg = TrainConfig {
            lambda_adv: 0.01,
            ..TrainConfig::toy()
        };
        let t = total_loss(&s(0.5), &s(0.7), &cfg).unwrap().item();
        assert!((t - 0.507).abs() < 1e-12);
        let cfg = TrainConfig {
            lambda_adv: 0.0,
            lambda_r: 2.0,
            ..cfg
        };
        assert_eq!(total_loss(&s(0.5), &s(0.7), &cfg).unwrap().item(), 1.0);
    }

    fn scalar_param(v: f64) -> Vec<(String, Tensor<f64>)> {
        vec![("x".into(), Tensor::param(&[1], vec![v]).unwrap())]
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [3.0, -0.002] {
            let p = scalar_param(1.0);
            let x = &p[0].1;
            x.mul(&Tensor::scalar(g)).unwrap().sum().backward().unwrap();
            let mut st = OptimizerState::new(&p);
            adam_step(&p, &mut st, 0.01, &AdamHyper::default()).unwrap();
            let moved = x.item() - 1.0;
            assert!((moved + 0.01 * g.signum()).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn adam_zero_gradient_stays() {
        let p = scalar_param(1.0);
        let mut st = OptimizerState::new(&p);
        adam_step(&p, &mut st, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(p[0].1.item(), 1.0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let p = scalar_param(0.0);
        let x = p[0].1.clone();
        let mut st = OptimizerState::new(&p);
        for _ in 0..200 {
            x.zero_grad();
            x.add_scalar(-3.0).square().sum().backward().unwrap();
            adam_step(&p, &mut st, 0.1, &AdamHyper::default()).unwrap();
        }
        assert!((x.item() - 3.0).abs() < 0.05, "{}", x.item());
    }

    #[test]
    fn schedule_drops() {
        let cfg = TrainConfig {
            lr: 0.01,
            lr_drop_iters: vec![10, 20],
            ..TrainConfig::toy()
        };
        assert_eq!(cfg.lr_at(10), 0.01);
        assert!((cfg.lr_at(11) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(21) - 0.0001).abs() < 1e-15);
        let full = TrainConfig::full();
        assert_eq!(
            (full.total_iters, full.lr_drop_iters.clone()),
            (500_000, vec![400_000, 450_000])
        );
    }

    #[test]
    fn config_round_trip() {
        let cfg = TrainConfig {
            lr_drop_iters: vec![5, 7],
            precision: Precision::F64,
            ..TrainConfig::toy()
        };
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse("preset = full\n").unwrap(), TrainConfig::full());
        assert!(TrainConfig::parse("lr = 0\n").is_err());
        assert!(TrainConfig::parse("learning_rate = 1\n").is_err());
    }

    #[test]
    fn optimizer_state_round_trip() {
        let p = scalar_param(0.5);
        let mut st = OptimizerState::new(&p);
        st.m[0][0] = 0.25;
        st.v[0][0] = 0.125;
        let back = OptimizerState::from_named(&p, 3, st.to_named(&p)).unwrap();
        st.step = 3;
        assert_eq!(back, st);
    }
}
