//! Tensor-network toolkit for convolution kernels.
//!
//! Kernels are 4-mode tensors in `(OUT, IN, KH, KW)` order. The crate covers
//! convolution and pooling as contractions, HOSVD/Tucker, CP and TT
//! decompositions, correlation truncation across mode bipartitions with
//! norm-loss / entanglement-entropy metrics, and analytical cost models.

pub mod tensor;
pub mod linalg;
pub mod conv;
pub mod decomp;
pub mod trunc;
pub mod costmodel;

pub use tensor::{contract, ContractionSpec, DenseTensor, TensorError};
pub use linalg::{svd, truncated_reconstruct, LinalgError, SvdFactors};
