//! Kolmogorov-Arnold layers: B-spline bases, learnable-activation linear
//! layers, patch embedding and the hybrid KAN/convolution block.

mod block;
mod linear;
mod patch;
mod spline;

pub use block::KanBlock;
pub use linear::{KanComposition, KanLinear};
pub use patch::{
    expand_patches, expand_patches_backward, map_to_tokens, tokens_to_map, PatchEmbed,
};
pub use spline::{bspline_basis, SplineConfig, SplineGrid};
