//! Desk-scale conditional diffusion engine and concept-blending experiment
//! harness.
//!
//! The crate pairs a trained glyph-image pipeline with an analytically exact
//! Gaussian-mixture oracle domain, and implements four strategies for
//! blending two concepts during generation: averaging their embeddings
//! (textual), switching prompts at a fixed step (switch), alternating
//! prompts per step (alternate), and assigning different prompts to the
//! denoiser's encoder/bottleneck/decoder blocks (unet). Everything is
//! seeded and replayable bit-for-bit.

pub mod blend;
pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod domains;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod harness;
pub mod manifest;
pub mod output;
pub mod rank;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use blend::{balanced_pattern, BlendSchedule, Block, MethodSpec, UnetVariant};
pub use denoiser::{init_params, time_embed, BlockConditionalDenoiser, NetDims};
pub use domains::{Conditioning, GlyphDomain, GmmComponent, GmmDomain};
pub use embedding::{blend_embeddings, ConceptVocab, Embedding, EmbeddingTable, NULL_CONCEPT};
pub use error::{Error, Result};
pub use rng::{derive_stream, RngStream};
pub use sampler::{cfg_combine, forward_diffuse, generate, reverse_step, BlockCond, Denoiser, GmmOracleDenoiser};
pub use schedule::{linear_schedule, timestep_grid, NoiseSchedule, SamplerConfig, SamplerKind};
pub use tensor::{Precision, Tensor};
