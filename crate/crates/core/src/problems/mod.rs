//! Problem generators: synthetic linear contractions and the
//! convection-diffusion benchmark.

pub mod convdiff;
pub mod linear;

pub use convdiff::{discretize_convdiff, final_report_residual, ConvDiffConfig, ConvDiffProblem, HybridRelaxation};
pub use linear::{build_linear, build_linear_with, LinearFixedPoint, LinearMap, Structure};
