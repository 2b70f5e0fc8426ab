//! Matrix types, the seeded random source and the Adam optimizer.

mod adam;
mod dense;
mod rng;
mod sparse;

pub use adam::AdamState;
pub use dense::DenseMatrix;
pub use rng::Rng;
pub use sparse::SparseLevelMatrix;

pub(crate) use dense::{axpy, dot};
