use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, project, CheckOptions, ParamError};
use crate::error::{Error, Result};
use crate::layers::{layer_norm, temporal_unfold, Conv2d, Conv3d, ConvTranspose2d, Linear, Params};
use crate::model::{ClipTensor, Discriminator, Generator, ModelConfig, Variant};
use crate::patching::{normalized_composite, soft_composite, soft_split, PatchGeometry, PatchSet};
use crate::tensor::Tensor;
use crate::training::{disc_loss, gen_adv_loss, recon_loss};
use crate::transformer::{BlockConfig, FeedForward, FfnKind, FuseFormerBlock, MultiHeadAttention, TokenBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Op,
    Block,
    Model,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "op" => Ok(Scope::Op),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Config(format!("unknown scope `{s}` (op, block or model)"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Op => "op",
            Scope::Block => "block",
            Scope::Model => "model",
        })
    }
}

type Runner = fn(&CheckOptions) -> Result<Vec<ParamError>>;

/// One registered gradient check.
#[derive(Clone, Copy)]
pub struct Target {
    pub name: &'static str,
    pub scope: Scope,
    /// Largest acceptable relative error.
    pub threshold: f64,
    pub run: Runner,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("scope", &self.scope)
            .field("threshold", &self.threshold)
            .finish()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed)).into_param()
}

/// Entries with magnitude in `[0.2, 1.2)`, away from kinks at zero.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.2..1.2);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::param(shape, data).expect("shape matches")
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| r.gen_range(0.3..2.0)).collect()).expect("shape matches")
}

fn named(items: &[(&str, &Tensor<f64>)]) -> Vec<(String, Tensor<f64>)> {
    items.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect()
}

/// Checks a unary op on a fresh input.
fn unary(
    x: Tensor<f64>,
    opts: &CheckOptions,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<ParamError>> {
    check(&named(&[("x", &x)]), || project(&f(&x)?, 1), opts)
}

fn binary(
    a: Tensor<f64>,
    b: Tensor<f64>,
    opts: &CheckOptions,
    f: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<ParamError>> {
    check(&named(&[("a", &a), ("b", &b)]), || project(&f(&a, &b)?, 2), opts)
}

fn geom() -> PatchGeometry {
    PatchGeometry::new(6, 5, 2, 3, 2, 1).expect("valid geometry")
}

fn with_module<M: Params<f64>>(
    module: &M,
    x: Tensor<f64>,
    opts: &CheckOptions,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<ParamError>> {
    let mut params = module.named_params();
    params.push(("input".into(), x.clone()));
    check(&params, || project(&f(&x)?, 3), opts)
}

fn block_cfg(kind: FfnKind) -> Result<BlockConfig> {
    let grid = PatchGeometry::new(5, 5, 1, 3, 2, 1)?;
    BlockConfig::new(8, 2, kind, grid, Some(2))
}

fn micro_clip(cfg: &ModelConfig, seed: u64) -> Result<ClipTensor<f64>> {
    let mut r = rng(seed);
    let (h, w) = (cfg.height, cfg.width);
    let t = 2;
    let frames = (0..t * h * w * 3).map(|_| r.gen::<f64>()).collect();
    let masks = (0..t * h * w)
        .map(|_| if r.gen_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    ClipTensor::new(
        Tensor::from_vec(&[t, h, w, 3], frames)?,
        Tensor::from_vec(&[t, h, w, 1], masks)?,
    )
}

/// Spreads biases out so leaky-relu pre-activations do not pile up near the kink,
/// where a central difference straddling zero is meaningless.
fn jitter<M: Params<f64>>(module: &M, seed: u64) {
    let mut r = rng(seed);
    for (name, p) in module.named_params() {
        if name.ends_with("bias") {
            p.update_data(|d| d.iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5)));
        }
    }
}

fn micro_model(opts: &CheckOptions, variant: Variant) -> Result<Vec<ParamError>> {
    let mut cfg = ModelConfig::micro(variant);
    cfg.pos_embed = true;
    let g = Generator::<f64>::new(&cfg)?;
    jitter(&g, 5);
    let clip = micro_clip(&cfg, 11)?;
    check(&g.named_params(), || project(&g.forward(&clip)?, 4), opts)
}

const EXACT: f64 = 1e-6;
const TIGHT: f64 = 1e-5;
const OP: f64 = 1e-4;
const MODEL: f64 = 1e-3;

macro_rules! target {
    ($name:literal, $scope:ident, $thr:expr, $body:expr) => {
        Target {
            name: $name,
            scope: Scope::$scope,
            threshold: $thr,
            run: $body,
        }
    };
}

/// Every registered check.
pub fn registry() -> Vec<Target> {
    vec![
        target!("add", Op, EXACT, |o| binary(
            input(&[3, 4], 1),
            input(&[4], 2),
            o,
            |a, b| a.add(b)
        )),
        target!("sub", Op, EXACT, |o| binary(
            input(&[3, 4], 3),
            input(&[3, 4], 4),
            o,
            |a, b| a.sub(b)
        )),
        target!("mul", Op, EXACT, |o| binary(
            input(&[2, 3, 4], 5),
            input(&[3, 1], 6),
            o,
            |a, b| a.mul(b)
        )),
        target!("div", Op, EXACT, |o| binary(
            input(&[3, 4], 7),
            positive(&[4], 8),
            o,
            |a, b| a.div(b)
        )),
        target!("neg", Op, EXACT, |o| unary(input(&[5], 9), o, |x| Ok(x.neg()))),
        target!("scale", Op, EXACT, |o| unary(input(&[5], 10), o, |x| Ok(x.scale(-2.5)))),
        target!("add_scalar", Op, EXACT, |o| unary(input(&[5], 11), o, |x| Ok(
            x.add_scalar(0.75)
        ))),
        target!("relu", Op, EXACT, |o| unary(away_from_zero(&[10], 12), o, |x| Ok(
            x.relu()
        ))),
        target!("leaky_relu", Op, EXACT, |o| unary(
            away_from_zero(&[10], 13),
            o,
            |x| Ok(x.leaky_relu(0.2))
        )),
        target!("exp", Op, EXACT, |o| unary(input(&[10], 14), o, |x| Ok(x.exp()))),
        target!("log", Op, EXACT, |o| unary(positive(&[10], 15), o, |x| x.log())),
        target!("sqrt", Op, EXACT, |o| unary(positive(&[10], 16), o, |x| x.sqrt())),
        target!("square", Op, EXACT, |o| unary(input(&[10], 17), o, |x| Ok(x.square()))),
        target!("abs", Op, EXACT, |o| unary(away_from_zero(&[10], 18), o, |x| Ok(
            x.abs()
        ))),
        target!("tanh", Op, EXACT, |o| unary(input(&[10], 19), o, |x| Ok(x.tanh()))),
        target!("sigmoid", Op, EXACT, |o| unary(
            input(&[10], 20),
            o,
            |x| Ok(x.sigmoid())
        )),
        target!("gelu", Op, EXACT, |o| unary(input(&[10], 21), o, |x| Ok(x.gelu()))),
        target!("clamp", Op, EXACT, |o| unary(away_from_zero(&[10], 22), o, |x| x
            .clamp(-0.1, 0.1)
            .add(&x.clamp(-5.0, 5.0)))),
        target!("matmul", Op, EXACT, |o| binary(
            input(&[4, 5], 23),
            input(&[5, 3], 24),
            o,
            |a, b| a.matmul(b)
        )),
        target!("bmm", Op, EXACT, |o| binary(
            input(&[2, 3, 4], 25),
            input(&[2, 4, 3], 26),
            o,
            |a, b| a.bmm(b)
        )),
        target!("sum", Op, EXACT, |o| unary(input(&[3, 4], 27), o, |x| Ok(x.sum()))),
        target!("mean", Op, EXACT, |o| unary(input(&[3, 4], 28), o, |x| Ok(x.mean()))),
        target!("reshape", Op, EXACT, |o| unary(input(&[3, 4], 29), o, |x| x
            .reshape(&[2, 6]))),
        target!("permute", Op, EXACT, |o| unary(input(&[2, 3, 4], 30), o, |x| x
            .permute(&[2, 0, 1]))),
        target!("transpose", Op, EXACT, |o| unary(input(&[2, 3, 4], 31), o, |x| x
            .transpose())),
        target!("narrow", Op, EXACT, |o| unary(input(&[4, 5], 32), o, |x| x
            .narrow(1, 1, 3))),
        target!("concat", Op, EXACT, |o| binary(
            input(&[2, 3], 33),
            input(&[2, 2], 34),
            o,
            |a, b| { Tensor::concat(&[a.clone(), b.clone()], 1) }
        )),
        target!("softmax", Op, EXACT, |o| unary(input(&[3, 4], 35), o, |x| x.softmax(1))),
        target!("softmax_axis0", Op, EXACT, |o| unary(input(&[3, 4], 36), o, |x| x
            .softmax(0))),
        target!("normalize_rows", Op, TIGHT, |o| unary(input(&[4, 8], 37), o, |x| x
            .normalize_rows(1e-6))),
        target!("layer_norm", Op, TIGHT, |o| {
            let (x, g, b) = (input(&[4, 8], 38), input(&[8], 39), input(&[8], 40));
            check(
                &named(&[("x", &x), ("gamma", &g), ("beta", &b)]),
                || project(&layer_norm(&x, &g, &b)?, 5),
                o,
            )
        }),
        target!("matmul_softmax_sum", Op, TIGHT, |o| binary(
            input(&[3, 4], 41),
            input(&[4, 5], 42),
            o,
            |a, b| {
                a.matmul(b)?
                    .softmax(1)?
                    .mul(&Tensor::from_vec(&[5], vec![0.3, -1.0, 0.7, 2.0, -0.4])?)
                    .map(|x| x.sum())
            }
        )),
        target!("soft_split", Op, OP, |o| {
            let g = geom();
            unary(input(&[2, g.h, g.w, g.c], 43), o, move |x| {
                Ok(soft_split(x, &g)?.patches)
            })
        }),
        target!("soft_composite", Op, OP, |o| {
            let g = geom();
            unary(input(&[2 * g.token_count(), g.patch_len()], 44), o, move |x| {
                soft_composite(&PatchSet::new(x.clone(), g, Some(2))?)
            })
        }),
        target!("normalized_composite", Op, OP, |o| {
            let g = geom();
            unary(input(&[g.token_count(), g.patch_len()], 45), o, move |x| {
                normalized_composite(&PatchSet::new(x.clone(), g, None)?)
            })
        }),
        target!("temporal_unfold", Op, OP, |o| unary(input(&[3, 2, 4], 46), o, |x| {
            temporal_unfold(x, 3)
        })),
        target!("linear", Op, OP, |o| {
            let l = Linear::new(5, 3, &mut rng(47));
            with_module(&l, input(&[4, 5], 48), o, |x| l.forward(x))
        }),
        target!("conv2d", Op, OP, |o| {
            let c = Conv2d::new(2, 3, 3, 2, 1, &mut rng(49));
            with_module(&c, input(&[2, 6, 5, 2], 50), o, |x| c.forward(x))
        }),
        target!("conv_transpose2d", Op, OP, |o| {
            let c = ConvTranspose2d::new(3, 2, 4, 2, 1, &mut rng(51));
            with_module(&c, input(&[2, 3, 2, 3], 52), o, |x| c.forward(x))
        }),
        target!("conv3d", Op, OP, |o| {
            let c = Conv3d::new(2, 2, 3, 2, 1, &mut rng(53));
            with_module(&c, input(&[3, 5, 4, 2], 54), o, |x| c.forward(x))
        }),
        target!("msa", Op, OP, |o| {
            let m = MultiHeadAttention::new(16, 4, &mut rng(55));
            with_module(&m, input(&[12, 16], 56), o, |x| m.forward(x))
        }),
        target!("ffn_standard", Op, OP, |o| {
            let f = FeedForward::new(&block_cfg(FfnKind::Standard)?, &mut rng(57));
            with_module(&f, input(&[18, 8], 58), o, |x| f.forward(x, 2))
        }),
        target!("f3n", Op, OP, |o| {
            let f = FeedForward::new(&block_cfg(FfnKind::F3n)?, &mut rng(59));
            with_module(&f, input(&[18, 8], 60), o, |x| f.forward(x, 2))
        }),
        target!("f3n_normalized", Op, OP, |o| {
            let f = FeedForward::new(&block_cfg(FfnKind::F3nNormalized)?, &mut rng(61));
            with_module(&f, input(&[18, 8], 62), o, |x| f.forward(x, 2))
        }),
        target!("recon_loss", Op, TIGHT, |o| {
            // Offsets keep |pred - target| away from the kink at zero.
            let p = away_from_zero(&[3, 4], 63);
            let t = Tensor::zeros(&[3, 4]);
            check(&named(&[("pred", &p)]), || recon_loss(&p, &t), o)
        }),
        target!("disc_loss", Op, TIGHT, |o| {
            let (a, b) = (input(&[1], 64), input(&[1], 65));
            check(
                &named(&[("real_logit", &a), ("fake_logit", &b)]),
                || disc_loss(&a.sum().sigmoid(), &b.sum().sigmoid()),
                o,
            )
        }),
        target!("gen_adv_loss", Op, TIGHT, |o| {
            let a = input(&[1], 66);
            check(&named(&[("fake_logit", &a)]), || gen_adv_loss(&a.sum().sigmoid()), o)
        }),
        target!("block_standard", Block, OP, |o| block(o, FfnKind::Standard)),
        target!("block_f3n", Block, OP, |o| block(o, FfnKind::F3n)),
        target!("block_f3n_normalized", Block, OP, |o| block(o, FfnKind::F3nNormalized)),
        target!("encode", Model, OP, |o| {
            let cfg = ModelConfig::micro(Variant::Vif);
            let g = Generator::<f64>::new(&cfg)?;
            jitter(&g.encoder, 6);
            let clip = micro_clip(&cfg, 67)?;
            check(&g.encoder.named_params(), || project(&g.encode(&clip)?, 6), o)
        }),
        target!("tokenize", Model, OP, |o| {
            let mut cfg = ModelConfig::micro(Variant::Vif);
            cfg.pos_embed = true;
            let g = Generator::<f64>::new(&cfg)?;
            let feat = input(&[2, 4, 4, cfg.channels], 68);
            let mut params = g.embed.named_params();
            params.extend(g.pos.iter().map(|p| ("pos".to_string(), p.clone())));
            params.push(("features".into(), feat.clone()));
            check(&params, || project(&g.tokenize(&feat)?.tokens, 7), o)
        }),
        target!("detokenize", Model, OP, |o| {
            let cfg = ModelConfig::micro(Variant::Vif);
            let g = Generator::<f64>::new(&cfg)?;
            let z = input(&[2 * cfg.tokens_per_frame()?, cfg.d], 69);
            let batch = TokenBatch::new(z.clone(), 2, g.split_geometry())?;
            let mut params = g.unembed.named_params();
            params.push(("tokens".into(), z));
            check(&params, || project(&g.detokenize(&batch)?, 8), o)
        }),
        target!("decode", Model, OP, |o| {
            let cfg = ModelConfig::micro(Variant::Vif);
            let g = Generator::<f64>::new(&cfg)?;
            jitter(&g.decoder, 7);
            let feat = input(&[2, 4, 4, cfg.channels], 70);
            with_module(&g.decoder, feat, o, |x| g.decode(x))
        }),
        target!("discriminate", Model, OP, |o| {
            let cfg = ModelConfig::micro(Variant::Vif);
            let d = Discriminator::<f64>::new(&cfg);
            jitter(&d, 8);
            let clip = micro_clip(&cfg, 71)?;
            check(&d.named_params(), || d.forward(&clip.frames), o)
        }),
        target!("model_vib_t", Model, MODEL, |o| micro_model(o, Variant::VibT)),
        target!("model_vib_s", Model, MODEL, |o| micro_model(o, Variant::VibS)),
        target!("model_vif", Model, MODEL, |o| micro_model(o, Variant::Vif)),
    ]
}

fn block(opts: &CheckOptions, kind: FfnKind) -> Result<Vec<ParamError>> {
    let cfg = block_cfg(kind)?;
    let b = FuseFormerBlock::new(cfg, &mut rng(72));
    let x = input(&[2 * cfg.inner_geom.token_count(), cfg.d], 73);
    let grid = cfg.inner_geom;
    with_module(&b, x, opts, |x| {
        Ok(b.forward(&TokenBatch::new(x.clone(), 2, grid)?)?.tokens)
    })
}
