//! The warp matrix `P`, its off-diagonal penalty, and the outer loop that
//! learns it from query losses.

mod checkpoint;
mod hypergrad;
mod matrix;
mod meta;
mod tod;

pub use checkpoint::{decode_warps, encode_warps, load_warps, save_warps, WARP_MAGIC, WARP_VERSION};
pub use hypergrad::{adapt, adapted_query_loss, hypergrad, HyperGrad, MetaConfig};
pub use matrix::{kron, FormPolicy, WarpForm, WarpMatrix, WarpVars};
pub use meta::{
    meta_train, meta_update, mean_adapted_loss, EpisodeShape, MetaOutcome, MetaRecord, MetaState,
    OuterStep,
};
pub use tod::{offdiag_norm, tod_gradient, tod_penalty};
