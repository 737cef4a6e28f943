//! The NxM constraint set: pattern descriptor, projection, masks and the
//! packed deployment format.

mod codec;
mod mask;
mod pattern;
mod project;

pub use codec::{compress, decompress, CompressedNxm, COMPRESSED_MAGIC};
pub use mask::{Mask, NxmMask};
pub use pattern::SparsityPattern;
pub use project::{
    check_compliance, extract_mask, first_violation, project_nxm, projection_distance_sq,
};
