use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClipTensor, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{join, Conv2d, ConvTranspose2d, Linear, Params};
use crate::patching::{normalized_composite, soft_split, PatchGeometry, PatchSet};
use crate::tensor::{Element, Tensor};
use crate::transformer::{FuseFormerBlock, TokenBatch};

/// Four 3×3 convolutions: two stride-2 stages then two stride-1 layers.
#[derive(Clone, Debug)]
pub struct Encoder<T: Element> {
    pub convs: [Conv2d<T>; 4],
    pub slope: f64,
}

impl<T: Element> Encoder<T> {
    pub fn new<R: rand::Rng + ?Sized>(c: usize, slope: f64, rng: &mut R) -> Self {
        let half = c / 2;
        Encoder {
            convs: [
                Conv2d::new(4, half, 3, 2, 1, rng),
                Conv2d::new(half, c, 3, 2, 1, rng),
                Conv2d::new(c, c, 3, 1, 1, rng),
                Conv2d::new(c, c, 3, 1, 1, rng),
            ],
            slope,
        }
    }

    /// `(t, H, W, 4)` → `(t, H/4, W/4, c)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = x.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?.leaky_relu(self.slope);
        }
        Ok(x)
    }
}

impl<T: Element> Params<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Two stride-2 transposed convolutions and a 3×3 convolution to RGB,
/// squashed into `[0, 1]` by `(tanh + 1) / 2`.
#[derive(Clone, Debug)]
pub struct Decoder<T: Element> {
    pub up1: ConvTranspose2d<T>,
    pub up2: ConvTranspose2d<T>,
    pub out: Conv2d<T>,
    pub slope: f64,
}

impl<T: Element> Decoder<T> {
    pub fn new<R: rand::Rng + ?Sized>(c: usize, slope: f64, rng: &mut R) -> Self {
        let half = c / 2;
        Decoder {
            up1: ConvTranspose2d::new(c, c, 4, 2, 1, rng),
            up2: ConvTranspose2d::new(c, half, 4, 2, 1, rng),
            out: Conv2d::new(half, 3, 3, 1, 1, rng),
            slope,
        }
    }

    /// `(t, H/4, W/4, c)` → `(t, H, W, 3)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.up1.forward(x)?.leaky_relu(self.slope);
        let x = self.up2.forward(&x)?.leaky_relu(self.slope);
        Ok(self.out.forward(&x)?.tanh().add_scalar(1.0).scale(0.5))
    }
}

impl<T: Element> Params<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.up1.visit(&join(prefix, "up1"), f);
        self.up2.visit(&join(prefix, "up2"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Generator<T: Element> {
    pub cfg: ModelConfig,
    pub encoder: Encoder<T>,
    /// Patch vector → token.
    pub embed: Linear<T>,
    /// `(n, d)`, shared by all frames.
    pub pos: Option<Tensor<T>>,
    pub blocks: Vec<FuseFormerBlock<T>>,
    /// Token → patch vector.
    pub unembed: Linear<T>,
    pub decoder: Decoder<T>,
    split: PatchGeometry,
    composite: PatchGeometry,
}

impl<T: Element> Generator<T> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let split = cfg.split_geometry()?;
        let composite = cfg.composite_geometry()?;
        let block_cfg = cfg.block_config()?;
        let c = cfg.channels;
        let encoder = Encoder::new(c, cfg.leaky_slope, &mut rng);
        let embed = Linear::new(split.patch_len(), cfg.d, &mut rng);
        let pos = cfg
            .pos_embed
            .then(|| Tensor::randn(&[split.token_count(), cfg.d], 0.02, &mut rng).into_param());
        let blocks = (0..cfg.depth)
            .map(|_| FuseFormerBlock::new(block_cfg, &mut rng))
            .collect();
        let unembed = Linear::new(cfg.d, composite.patch_len(), &mut rng);
        let decoder = Decoder::new(c, cfg.leaky_slope, &mut rng);
        Ok(Generator {
            cfg: cfg.clone(),
            encoder,
            embed,
            pos,
            blocks,
            unembed,
            decoder,
            split,
            composite,
        })
    }

    pub fn split_geometry(&self) -> PatchGeometry {
        self.split
    }

    pub fn composite_geometry(&self) -> PatchGeometry {
        self.composite
    }

    fn check_clip(&self, clip: &ClipTensor<T>) -> Result<()> {
        if clip.extents() != (self.cfg.height, self.cfg.width) {
            let (h, w) = clip.extents();
            return Err(Error::Config(format!(
                "clip is {h}x{w}, model expects {}x{}",
                self.cfg.height, self.cfg.width
            )));
        }
        Ok(())
    }

    pub fn encode(&self, clip: &ClipTensor<T>) -> Result<Tensor<T>> {
        self.check_clip(clip)?;
        self.encoder.forward(&clip.network_input()?)
    }

    /// `(t, h, w, c)` features → `(t·n, d)` tokens.
    pub fn tokenize(&self, feat: &Tensor<T>) -> Result<TokenBatch<T>> {
        let patches = soft_split(feat, &self.split)?;
        let t = patches.frame_count();
        let tokens = self.embed.forward(&patches.patches)?;
        let tokens = match &self.pos {
            None => tokens,
            Some(pos) => {
                let (n, d) = (self.split.token_count(), self.cfg.d);
                tokens.reshape(&[t, n, d])?.add(pos)?.reshape(&[t * n, d])?
            }
        };
        TokenBatch::new(tokens, t, self.split)
    }

    pub fn detokenize(&self, z: &TokenBatch<T>) -> Result<Tensor<T>> {
        let patches = self.unembed.forward(&z.tokens)?;
        normalized_composite(&PatchSet::new(patches, self.composite, Some(z.t))?)
    }

    pub fn decode(&self, feat: &Tensor<T>) -> Result<Tensor<T>> {
        self.decoder.forward(feat)
    }

    /// Token batches after each block, first to last.
    pub fn forward_layers(&self, clip: &ClipTensor<T>) -> Result<Vec<TokenBatch<T>>> {
        let mut z = self.tokenize(&self.encode(clip)?)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            z = block.forward(&z)?;
            out.push(z.clone());
        }
        Ok(out)
    }

    /// Frames decoded from an intermediate token batch.
    pub fn decode_intermediate(&self, z: &TokenBatch<T>) -> Result<Tensor<T>> {
        self.decode(&self.detokenize(z)?)
    }

    /// Raw generator output `(t, H, W, 3)`, every pixel generated.
    pub fn forward(&self, clip: &ClipTensor<T>) -> Result<Tensor<T>> {
        let layers = self.forward_layers(clip)?;
        let last = layers
            .last()
            .ok_or_else(|| Error::Config("model has no blocks".into()))?;
        self.decode_intermediate(last)
    }

    /// Output with known pixels copied from the input.
    pub fn inpaint(&self, clip: &ClipTensor<T>) -> Result<Tensor<T>> {
        clip.composite(&self.forward(clip)?)
    }
}

impl<T: Element> Params<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.embed.visit(&join(prefix, "embed"), f);
        if let Some(pos) = &self.pos {
            f(join(prefix, "pos"), pos);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.unembed.visit(&join(prefix, "unembed"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}
