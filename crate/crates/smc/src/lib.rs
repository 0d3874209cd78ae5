//! A desk-scale neural audio codec with a dual token stream and a diffusion decoder.
//!
//! The codec represents 16 kHz audio as two interleaved token sequences:
//!
//! * **semantic tokens** from a frozen k-means codebook over features of a
//!   fixed random-projection extractor, carrying content information, and
//! * **acoustic tokens** from a learned vector quantizer fed by a recurrent
//!   encoder, carrying the residual detail the semantic layer misses.
//!
//! Decoding runs a conditional latent diffusion model (v-prediction, DDIM)
//! over a compact spectrogram latent and renders audio with Griffin-Lim.
//! Every stage is deterministic given its seeds, so encode/decode, training
//! and evaluation are reproducible end to end on a single CPU.
//!
//! Entry points:
//! * [`pipeline`] for whole-file encode/decode and training,
//! * [`bitstream`] for the packet format and bitrate arithmetic,
//! * [`cli`] for the `smc` command-line front end,
//! * `examples/` for one runnable walk-through per capability.

pub mod audio_io;
pub mod bitstream;
pub mod cli;
pub mod clustering;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod quantizers;
pub mod seeds;
pub mod spectral;
pub mod synthcorpus;

pub use error::{Error, Result};
