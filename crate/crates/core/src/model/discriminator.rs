use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;
use crate::layers::{join, Conv3d, Params};
use crate::tensor::{Element, Tensor};

/// Four 3×3×3 spatiotemporal convolutions (spatial stride 2) whose
/// single-channel output is averaged and passed through a sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Element> {
    pub convs: [Conv3d<T>; 4],
    pub slope: f64,
}

impl<T: Element> Discriminator<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        // Offset keeps the initialisation independent of the generator's.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
        let c = cfg.disc_channels;
        Discriminator {
            convs: [
                Conv3d::new(3, c, 3, 2, 1, &mut rng),
                Conv3d::new(c, 2 * c, 3, 2, 1, &mut rng),
                Conv3d::new(2 * c, 2 * c, 3, 2, 1, &mut rng),
                Conv3d::new(2 * c, 1, 3, 1, 1, &mut rng),
            ],
            slope: cfg.leaky_slope,
        }
    }

    /// Logit before the sigmoid.
    pub fn logit(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = frames.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x)?;
            if i < last {
                x = x.leaky_relu(self.slope);
            }
        }
        Ok(x.mean())
    }

    /// Probability in `(0, 1)` that `frames` (`(t, H, W, 3)`) is real.
    pub fn forward(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.logit(frames)?.sigmoid())
    }
}

impl<T: Element> Params<T> for Discriminator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }
}
