//! Transformer blocks over spatiotemporal tokens.
//!
//! A block is the pre-norm residual pair
//!
//! ```text
//! z' = MSA(LN1(z)) + z
//! y  = FFN(LN2(z')) + z'
//! ```
//!
//! where FFN is either a plain two-layer MLP of width `4d` or the fusion
//! feed-forward network (F3N). F3N widens to `k²c'` channels, folds each
//! frame's hidden vectors back into a `(h, w, c')` map with a soft composite,
//! re-splits it with the same geometry and projects back to `d`, so
//! neighbouring tokens exchange the sub-patch values they overlap on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, LayerNorm, Linear, Params};
use crate::patching::{normalized_composite, soft_composite, soft_split, PatchGeometry, PatchSet};
use crate::tensor::{Element, Tensor};

/// Tokens of `t` frames, `n` per frame, stored frame-major as `(t·n, d)`.
#[derive(Clone, Debug)]
pub struct TokenBatch<T: Element> {
    pub tokens: Tensor<T>,
    pub t: usize,
    pub n: usize,
    /// Soft split that produced the tokens from the feature maps.
    pub geom: PatchGeometry,
}

impl<T: Element> TokenBatch<T> {
    pub fn new(tokens: Tensor<T>, t: usize, geom: PatchGeometry) -> Result<Self> {
        let n = geom.token_count();
        match *tokens.shape() {
            [rows, d] if rows == t * n && d > 0 => Ok(TokenBatch { tokens, t, n, geom }),
            _ => Err(Error::shape("token batch", tokens.shape(), &[t * n, 0])),
        }
    }

    pub fn d(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn with_tokens(&self, tokens: Tensor<T>) -> Result<Self> {
        TokenBatch::new(tokens, self.t, self.geom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfnKind {
    Standard,
    F3n,
    F3nNormalized,
}

impl FfnKind {
    pub fn is_fused(self) -> bool {
        !matches!(self, FfnKind::Standard)
    }
}

/// `c' = 10·⌊4d / (10k²)⌋`, the widest multiple of ten channels whose
/// `k×k` patches fit in the usual `4d` hidden width.
pub fn f3n_channels(d: usize, k: usize) -> usize {
    10 * (4 * d / (10 * k * k))
}

/// Weights and biases of a two-layer MLP `d → hidden → d`.
pub fn mlp_param_count(d: usize, hidden: usize) -> usize {
    2 * d * hidden + hidden + d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub d: usize,
    pub heads: usize,
    pub ffn_kind: FfnKind,
    /// Token grid geometry. For F3N its channel count is `c'`.
    pub inner_geom: PatchGeometry,
}

impl BlockConfig {
    /// `grid` is the tokenizer's geometry; its channel count is ignored.
    /// `inner_channels` overrides the derived `c'` for F3N.
    pub fn new(
        d: usize,
        heads: usize,
        ffn_kind: FfnKind,
        grid: PatchGeometry,
        inner_channels: Option<usize>,
    ) -> Result<Self> {
        if d == 0 || heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "token dim {d} is not divisible into {heads} heads"
            )));
        }
        let inner_geom = if ffn_kind.is_fused() {
            let c = inner_channels.unwrap_or_else(|| f3n_channels(d, grid.k));
            if c < 1 {
                return Err(Error::Config(format!(
                    "F3N needs 4d >= 10k^2 (d={d}, k={}); set f3n_channels explicitly",
                    grid.k
                )));
            }
            grid.with_channels(c)?
        } else {
            grid
        };
        Ok(BlockConfig {
            d,
            heads,
            ffn_kind,
            inner_geom,
        })
    }

    /// `c'` for F3N.
    pub fn inner_channels(&self) -> Option<usize> {
        self.ffn_kind.is_fused().then_some(self.inner_geom.c)
    }

    pub fn hidden(&self) -> usize {
        match self.ffn_kind {
            FfnKind::Standard => 4 * self.d,
            _ => self.inner_geom.patch_len(),
        }
    }

    pub fn ffn_param_count(&self) -> usize {
        mlp_param_count(self.d, self.hidden())
    }
}

/// Scaled dot-product attention over every token of the clip at once.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<T: Element> {
    /// Fused `d → 3d` query/key/value projection.
    pub qkv: Linear<T>,
    pub out: Linear<T>,
    pub heads: usize,
}

impl<T: Element> MultiHeadAttention<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            qkv: Linear::new(d, 3 * d, rng),
            out: Linear::new(d, d, rng),
            heads,
        }
    }

    pub fn zeros(d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            qkv: Linear::zeros(d, 3 * d),
            out: Linear::zeros(d, d),
            heads,
        }
    }

    /// Output `(N, d)` and attention weights `(heads, N, N)`.
    pub fn forward_with_weights(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [rows, d] = *x.shape() else {
            return Err(Error::shape("msa", x.shape(), &[0, self.out.outputs()]));
        };
        let h = self.heads;
        if d % h != 0 {
            return Err(Error::Config(format!("token dim {d} is not divisible into {h} heads")));
        }
        let dh = d / h;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape(&[rows, 3, h, dh])?
            .permute(&[1, 2, 0, 3])?
            .reshape(&[3 * h, rows, dh])?;
        let q = qkv.narrow(0, 0, h)?;
        let k = qkv.narrow(0, h, h)?;
        let v = qkv.narrow(0, 2 * h, h)?;
        let weights = q.bmm(&k.transpose()?)?.scale(1.0 / (dh as f64).sqrt()).softmax(2)?;
        let heads = weights.bmm(&v)?.permute(&[1, 0, 2])?.reshape(&[rows, d])?;
        Ok((self.out.forward(&heads)?, weights))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_weights(x)?.0)
    }
}

impl<T: Element> Params<T> for MultiHeadAttention<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// Standard MLP or F3N, chosen by [`FfnKind`].
#[derive(Clone, Debug)]
pub struct FeedForward<T: Element> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub kind: FfnKind,
    pub inner_geom: PatchGeometry,
}

impl<T: Element> FeedForward<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &BlockConfig, rng: &mut R) -> Self {
        FeedForward {
            fc1: Linear::new(cfg.d, cfg.hidden(), rng),
            fc2: Linear::new(cfg.hidden(), cfg.d, rng),
            kind: cfg.ffn_kind,
            inner_geom: cfg.inner_geom,
        }
    }

    pub fn zeros(cfg: &BlockConfig) -> Self {
        FeedForward {
            fc1: Linear::zeros(cfg.d, cfg.hidden()),
            fc2: Linear::zeros(cfg.hidden(), cfg.d),
            kind: cfg.ffn_kind,
            inner_geom: cfg.inner_geom,
        }
    }

    /// `x` is `(t·n, d)` in frame-major order.
    pub fn forward(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let hidden = self.fc1.forward(x)?.gelu();
        let hidden = match self.kind {
            FfnKind::Standard => hidden,
            FfnKind::F3n | FfnKind::F3nNormalized => {
                let ps = PatchSet::new(hidden, self.inner_geom, Some(t))?;
                let map = if self.kind == FfnKind::F3nNormalized {
                    normalized_composite(&ps)?
                } else {
                    soft_composite(&ps)?
                };
                soft_split(&map, &self.inner_geom)?.patches
            }
        };
        self.fc2.forward(&hidden)
    }
}

impl<T: Element> Params<T> for FeedForward<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

#[derive(Clone, Debug)]
pub struct FuseFormerBlock<T: Element> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub cfg: BlockConfig,
}

impl<T: Element> FuseFormerBlock<T> {
    pub fn new<R: Rng + ?Sized>(cfg: BlockConfig, rng: &mut R) -> Self {
        FuseFormerBlock {
            norm1: LayerNorm::new(cfg.d),
            attn: MultiHeadAttention::new(cfg.d, cfg.heads, rng),
            norm2: LayerNorm::new(cfg.d),
            ffn: FeedForward::new(&cfg, rng),
            cfg,
        }
    }

    /// Attention and feed-forward weights all zero: the block is the identity.
    pub fn zeros(cfg: BlockConfig) -> Self {
        FuseFormerBlock {
            norm1: LayerNorm::new(cfg.d),
            attn: MultiHeadAttention::zeros(cfg.d, cfg.heads),
            norm2: LayerNorm::new(cfg.d),
            ffn: FeedForward::zeros(&cfg),
            cfg,
        }
    }

    pub fn forward(&self, z: &TokenBatch<T>) -> Result<TokenBatch<T>> {
        if z.d() != self.cfg.d || z.n != self.cfg.inner_geom.token_count() {
            return Err(Error::shape(
                "fuseformer block",
                z.tokens.shape(),
                &[z.t * self.cfg.inner_geom.token_count(), self.cfg.d],
            ));
        }
        let x = &z.tokens;
        let x = self.attn.forward(&self.norm1.forward(x)?)?.add(x)?;
        let y = self.ffn.forward(&self.norm2.forward(&x)?, z.t)?.add(&x)?;
        z.with_tokens(y)
    }
}

impl<T: Element> Params<T> for FuseFormerBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }
}
