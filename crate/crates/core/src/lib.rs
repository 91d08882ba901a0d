//! Transformer video inpainting with soft split / soft composite tokenization.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors with reverse-mode autodiff (`f32`/`f64`).
//! - [`patching`]: overlapped unfold (soft split) and fold (soft composite),
//!   token counting and coverage normalisation.
//! - [`transformer`]: layer norm, multi-head self-attention, the standard
//!   feed-forward network and the fusion feed-forward network (F3N).
//! - [`model`]: encoder, tokenizer, block stack, de-tokenizer, decoder and a
//!   small spatiotemporal discriminator for the ViB-T / ViB-S / ViF variants.
//! - [`training`]: losses, Adam, the alternating generator/discriminator loop.
//! - [`data`]: synthetic clips, masks and netpbm frame I/O.
//! - [`metrics`]: PSNR and SSIM.
//! - [`gradcheck`]: central finite-difference checks for every op.
//! - [`commands`]: the workflows behind the `fuseformer` binary.
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod patching;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use tensor::{no_grad, Element, Tensor};
