//! Complete inpainting networks.
//!
//! A [`Generator`] runs
//!
//! ```text
//! frames ⊙ (1 − mask) ‖ mask → CNN encoder → tokenize → L blocks
//!        → de-tokenize → CNN decoder → frames
//! ```
//!
//! and a [`Discriminator`] scores a whole clip with a small spatiotemporal
//! CNN. The [`Variant`] picks the tokenization geometry on each side and the
//! feed-forward kind inside the blocks.

mod discriminator;
mod generator;

use std::fmt;
use std::str::FromStr;

pub use discriminator::Discriminator;
pub use generator::{Decoder, Encoder, Generator};

use crate::config::{render, KvFile};
use crate::error::{Error, Result};
use crate::patching::PatchGeometry;
use crate::tensor::{Element, Tensor};
use crate::transformer::{BlockConfig, FfnKind};

/// Spatial reduction between frames and feature maps.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Hard split, patch size equal to stride.
    VibT,
    /// Soft split and normalised soft composite, standard FFN.
    VibS,
    /// Soft split only; the composite side is a hard tiling.
    VibSSsOnly,
    /// Soft composite only; the split side is a hard tiling.
    VibSScOnly,
    /// Soft split, soft composite and normalised F3N.
    Vif,
    /// As [`Variant::Vif`] with an unnormalised F3N composite.
    VifUnnormalized,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::VibT,
        Variant::VibS,
        Variant::VibSSsOnly,
        Variant::VibSScOnly,
        Variant::Vif,
        Variant::VifUnnormalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VibT => "vib_t",
            Variant::VibS => "vib_s",
            Variant::VibSSsOnly => "vib_s_ss_only",
            Variant::VibSScOnly => "vib_s_sc_only",
            Variant::Vif => "vif",
            Variant::VifUnnormalized => "vif_unnormalized",
        }
    }

    pub fn ffn_kind(self) -> FfnKind {
        match self {
            Variant::Vif => FfnKind::F3nNormalized,
            Variant::VifUnnormalized => FfnKind::F3n,
            _ => FfnKind::Standard,
        }
    }

    fn soft_split(self) -> bool {
        !matches!(self, Variant::VibT | Variant::VibSScOnly)
    }

    fn soft_composite(self) -> bool {
        !matches!(self, Variant::VibT | Variant::VibSSsOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of transformer blocks.
    pub depth: usize,
    /// Token dimension.
    pub d: usize,
    pub heads: usize,
    /// Patch size, stride and padding of the soft split on the feature map.
    pub k: usize,
    pub s: usize,
    pub p: usize,
    /// Encoder output channels.
    pub channels: usize,
    /// Frame extents.
    pub height: usize,
    pub width: usize,
    /// Overrides the derived F3N inner channel count.
    pub f3n_channels: Option<usize>,
    /// Learned additive per-token position embedding.
    pub pos_embed: bool,
    pub leaky_slope: f64,
    pub discriminator: bool,
    pub disc_channels: usize,
    /// Initialisation seed.
    pub seed: u64,
}

impl ModelConfig {
    /// Frames 64×64, `d = 64`, two blocks, `k = 7, s = 3, p = 3`
    /// (hard variant: `k = s = 4`).
    pub fn toy(variant: Variant) -> Self {
        let (k, s, p) = match variant {
            Variant::VibT => (4, 4, 0),
            _ => (7, 3, 3),
        };
        ModelConfig {
            variant,
            depth: 2,
            d: 64,
            heads: 4,
            k,
            s,
            p,
            channels: 32,
            height: 64,
            width: 64,
            f3n_channels: variant.ffn_kind().is_fused().then_some(5),
            pos_embed: false,
            leaky_slope: 0.2,
            discriminator: true,
            disc_channels: 16,
            seed: 0,
        }
    }

    /// The smallest useful configuration: 16×16 frames, `d = 16`, one block.
    pub fn micro(variant: Variant) -> Self {
        let (k, s, p) = match variant {
            Variant::VibT => (2, 2, 0),
            // One-sided variants need k - s even.
            Variant::VibSSsOnly | Variant::VibSScOnly => (4, 2, 1),
            _ => (3, 2, 1),
        };
        ModelConfig {
            variant,
            depth: 1,
            d: 16,
            heads: 2,
            k,
            s,
            p,
            channels: 8,
            height: 16,
            width: 16,
            f3n_channels: variant.ffn_kind().is_fused().then_some(7),
            pos_embed: false,
            leaky_slope: 0.2,
            discriminator: true,
            disc_channels: 4,
            seed: 0,
        }
    }

    /// 240×432 frames, `d = 512`, eight blocks, `k = 7, s = 3, p = 3`.
    pub fn full(variant: Variant) -> Self {
        let (k, s, p) = match variant {
            Variant::VibT => (3, 3, 0),
            _ => (7, 3, 3),
        };
        ModelConfig {
            variant,
            depth: 8,
            d: 512,
            heads: 4,
            k,
            s,
            p,
            channels: 128,
            height: 240,
            width: 432,
            f3n_channels: None,
            pos_embed: false,
            leaky_slope: 0.2,
            discriminator: true,
            disc_channels: 64,
            seed: 0,
        }
    }

    pub fn feature_extents(&self) -> (usize, usize) {
        (self.height / DOWNSAMPLE, self.width / DOWNSAMPLE)
    }

    fn geometry(&self, soft: bool) -> Result<PatchGeometry> {
        let (h, w) = self.feature_extents();
        let (k, s, p) = (self.k, self.s, self.p);
        if soft || self.variant == Variant::VibT {
            return PatchGeometry::new(h, w, self.channels, k, s, p);
        }
        // Hard tiling with the same grid as the soft side: s×s patches at
        // the centres of the k×k ones.
        let margin = (k - s) / 2;
        if (k - s) % 2 != 0 || p < margin {
            return Err(Error::Config(format!(
                "one-sided variant needs k - s even and p >= (k - s)/2 (k={k}, s={s}, p={p})"
            )));
        }
        PatchGeometry::new(h, w, self.channels, s, s, p - margin)
    }

    /// Geometry of the soft (or hard) split that makes tokens.
    pub fn split_geometry(&self) -> Result<PatchGeometry> {
        self.geometry(self.variant.soft_split())
    }

    /// Geometry of the composite that turns tokens back into features.
    pub fn composite_geometry(&self) -> Result<PatchGeometry> {
        self.geometry(self.variant.soft_composite())
    }

    pub fn block_config(&self) -> Result<BlockConfig> {
        BlockConfig::new(
            self.d,
            self.heads,
            self.variant.ffn_kind(),
            self.split_geometry()?,
            self.f3n_channels,
        )
    }

    pub fn tokens_per_frame(&self) -> Result<usize> {
        Ok(self.split_geometry()?.token_count())
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(DOWNSAMPLE)
            || !self.width.is_multiple_of(DOWNSAMPLE)
        {
            return Err(Error::Config(format!(
                "frame extents {}x{} must be positive multiples of {DOWNSAMPLE}",
                self.height, self.width
            )));
        }
        if self.depth == 0 || self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "need depth >= 1 and an even channel count >= 2 (depth={}, channels={})",
                self.depth, self.channels
            )));
        }
        if self.discriminator && self.disc_channels == 0 {
            return Err(Error::Config("disc_channels must be positive".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!("bad leaky_slope {}", self.leaky_slope)));
        }
        match self.variant {
            Variant::VibT if self.k != self.s || self.p != 0 => {
                return Err(Error::Config(format!(
                    "vib_t uses a hard split: need k == s and p == 0 (k={}, s={}, p={})",
                    self.k, self.s, self.p
                )))
            }
            Variant::VibT => {}
            _ if self.s >= self.k => {
                return Err(Error::Config(format!(
                    "{} needs overlapping patches: s < k (k={}, s={})",
                    self.variant, self.k, self.s
                )))
            }
            _ => {}
        }
        let split = self.split_geometry()?;
        let composite = self.composite_geometry()?;
        if split.grid() != composite.grid() {
            return Err(Error::Config(format!(
                "split grid {:?} and composite grid {:?} differ",
                split.grid(),
                composite.grid()
            )));
        }
        self.block_config()?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let variant: Variant = kv
            .take("variant")?
            .ok_or_else(|| Error::Config("missing `variant`".into()))?;
        let base = ModelConfig::toy(variant);
        let f3n_channels = match kv.take::<String>("f3n_channels")?.as_deref() {
            None => base.f3n_channels,
            Some("auto") => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|e| Error::Config(format!("bad value for `f3n_channels`: {e}")))?,
            ),
        };
        let cfg = ModelConfig {
            variant,
            depth: kv.take_or("depth", base.depth)?,
            d: kv.take_or("dim", base.d)?,
            heads: kv.take_or("heads", base.heads)?,
            k: kv.take_or("patch", base.k)?,
            s: kv.take_or("stride", base.s)?,
            p: kv.take_or("padding", base.p)?,
            channels: kv.take_or("channels", base.channels)?,
            height: kv.take_or("height", base.height)?,
            width: kv.take_or("width", base.width)?,
            f3n_channels,
            pos_embed: kv.take_or("pos_embed", base.pos_embed)?,
            leaky_slope: kv.take_or("leaky_slope", base.leaky_slope)?,
            discriminator: kv.take_or("discriminator", base.discriminator)?,
            disc_channels: kv.take_or("disc_channels", base.disc_channels)?,
            seed: kv.take_or("seed", base.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        render(&[
            ("variant", self.variant.to_string()),
            ("depth", self.depth.to_string()),
            ("dim", self.d.to_string()),
            ("heads", self.heads.to_string()),
            ("patch", self.k.to_string()),
            ("stride", self.s.to_string()),
            ("padding", self.p.to_string()),
            ("channels", self.channels.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            (
                "f3n_channels",
                self.f3n_channels.map_or("auto".into(), |c| c.to_string()),
            ),
            ("pos_embed", self.pos_embed.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("discriminator", self.discriminator.to_string()),
            ("disc_channels", self.disc_channels.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }
}

/// Ground-truth frames `(t, H, W, 3)` in `[0, 1]` and hole masks
/// `(t, H, W, 1)` with 1 marking missing pixels.
#[derive(Clone, Debug)]
pub struct ClipTensor<T: Element> {
    pub frames: Tensor<T>,
    pub masks: Tensor<T>,
}

impl<T: Element> ClipTensor<T> {
    pub fn new(frames: Tensor<T>, masks: Tensor<T>) -> Result<Self> {
        let [t, h, w, 3] = *frames.shape() else {
            return Err(Error::shape("clip frames", frames.shape(), &[0, 0, 0, 3]));
        };
        if masks.shape() != [t, h, w, 1] {
            return Err(Error::shape("clip masks", masks.shape(), &[t, h, w, 1]));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "frame extents {h}x{w} must be multiples of {DOWNSAMPLE}"
            )));
        }
        if masks.data().iter().any(|&m| m != T::zero() && m != T::one()) {
            return Err(Error::Config("mask values must be 0 or 1".into()));
        }
        Ok(ClipTensor { frames, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.frames.shape()[1], self.frames.shape()[2])
    }

    /// Network input: masked frames with the mask as a fourth channel.
    pub fn network_input(&self) -> Result<Tensor<T>> {
        let keep = self.masks.neg().add_scalar(1.0);
        let masked = self.frames.mul(&keep)?;
        Tensor::concat(&[masked, self.masks.clone()], 3)
    }

    /// `generated` inside the holes, the original frames elsewhere. Known
    /// pixels are copied, never recomputed.
    pub fn composite(&self, generated: &Tensor<T>) -> Result<Tensor<T>> {
        if generated.shape() != self.frames.shape() {
            return Err(Error::shape("composite", generated.shape(), self.frames.shape()));
        }
        let (g, f, m) = (generated.data(), self.frames.data(), self.masks.data());
        let out = f
            .chunks(3)
            .zip(g.chunks(3))
            .zip(m.iter())
            .flat_map(|((fp, gp), &mv)| if mv == T::one() { gp } else { fp }.to_vec())
            .collect();
        Tensor::from_vec(self.frames.shape(), out)
    }

    pub fn cast<U: Element>(&self) -> ClipTensor<U> {
        ClipTensor {
            frames: self.frames.cast(),
            masks: self.masks.cast(),
        }
    }
}
