//! Finite-dimensional Wiener chaos: symmetric kernels, contractions, Gamma
//! operators, joint cumulants, Edgeworth terms and the Stein U-transform.
//!
//! Everything here is `no_std` with `alloc`; Monte Carlo, file formats and
//! the CLI live in the `chaoslab` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chaos;
pub mod edgeworth;
pub mod error;
pub mod families;
pub mod hermite;
pub mod linalg;
pub mod majorizing;
pub mod multi_index;
pub mod quadrature;
pub mod second_chaos;
pub mod tensor;

pub use error::{Error, Result};
pub use multi_index::MultiIndex;
pub use tensor::{GramBasis, SymKernel, Tensor};
