//! Asynchronous fixed-point iterations with pluggable convergence detection.
//!
//! The crate simulates `p` processes iterating `x_i := f_i(x)` on stale
//! neighbor data over links with configurable delivery order, and detects
//! global convergence with one of four protocols: an exact FIFO snapshot,
//! a payload-carrying snapshot, an approximate non-FIFO snapshot with a
//! confirmation phase, and plain successive reductions of local residuals.
//! An oracle with full visibility measures what each protocol actually
//! delivered.

pub mod detection;
pub mod engine;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod problems;

pub use detection::{BoundConstant, DetectionConfig, Protocol, SnapshotRecord, SnapshotStatus};
pub use engine::network::DeliveryModel;
pub use engine::{run, EngineConfig, Mode, RunOutput, RunReport, Scenario, Verdict};
pub use error::{Error, Result};
pub use fixedpoint::{
    evaluate_local_residual, reduce_residual, true_global_residual, BlockMap, FixedPointProblem, GlobalView, Norm,
    ResidualSpec,
};
