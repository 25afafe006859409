//! Hand-written neural-network primitives: parameter bookkeeping, the
//! fixed operator set and the shared transformer block. Reverse-mode
//! gradients are derived by hand and validated against central finite
//! differences in the test suites.

pub mod block;
pub mod ops;
pub mod params;

pub use block::{block_backward, block_forward, Block, BlockCache, INIT_STD};
pub use ops::{LayerNorm, LnCache};
pub use params::{
    accumulate, ema_blend, load_param_vec, n_params, param_manifest, param_vec, scale_params,
    ParamEntry, Parameterized,
};
