//! Dense arrays and seeded random streams.

mod rng;
mod scalar;
mod tensor;

pub use rng::{derive_seed, sample_standard_normal, Rng};
pub use scalar::Scalar;
pub(crate) use tensor::gemm_slices;
pub use tensor::Tensor;
