//! Style-based generator: architecture spec, parameter blocks, synthesis and
//! exact parameter-space arithmetic.

pub mod checkpoint;
mod network;
mod params;
mod spec;

pub use network::{
    from_tensors, map_to_w, mean_w, synthesize, synthesize_batch, to_tensors, w_tensor, Generator,
};
pub use params::{
    layer_swap, layer_swap_at, offset_apply, offset_diff, Block, LatentCode, LatentSpace,
    OffsetBlock, ParameterVector, TmtOffset,
};
pub use spec::{BlockInfo, BlockRole, GeneratorSpec, MAPPING_LR_MULT};
