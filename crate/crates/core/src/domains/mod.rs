//! Ground-truth concept worlds: the analytically tractable Gaussian-mixture
//! plane and the 16x16 glyph images.

mod glyph;
mod gmm;

pub use glyph::{GlyphDomain, GLYPH_CONCEPTS, GLYPH_SIZE};
pub use gmm::{Conditioning, GmmComponent, GmmDomain, VARIANCE_FLOOR};
