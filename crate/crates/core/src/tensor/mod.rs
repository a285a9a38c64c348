//! Grids, 4D fields, sparse joint distributions and the QSHT container.

mod field;
mod format;
mod grid;
mod sparse;

pub use field::{slice_conditional, ComplexField4, Field2, Field4, Photon, RealField4};
pub use format::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, Tensor, QSHT_MAGIC};
pub use grid::GridSpec;
pub use sparse::{pack_key, unpack_key, SparseJpd};
