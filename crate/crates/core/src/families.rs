//! Example families with closed-form reference values: exploding
//! Brownian-sheet functionals, continuous-time Toeplitz quadratic
//! functionals and Breuer-Major Hermite variations of fractional Gaussian
//! noise.

mod breuer;
mod sheet;
mod toeplitz;

pub use breuer::{
    breuer_evaluate, breuer_limit_constant, fgn_covariance, BreuerSecondChaos, BreuerSpec,
};
pub use sheet::{
    sheet_c_tilde, sheet_constant, sheet_constant_symmetric, sheet_constant_quadrature,
    SheetDiscretization, SheetFourthMoment, SheetMode, SheetSpec,
};
pub use toeplitz::{CauchyBump, EvenFunction, GaussianBump, ToeplitzGrid, ToeplitzSpec};
