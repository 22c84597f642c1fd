//! Estimation and interpolation of continuous-time signals from noisy
//! discrete-time samples.
//!
//! The model is a linear state-space system driven by white Gaussian noise,
//!
//! ```text
//! dX(t) = (A X(t) + h) dt + B dU(t),      y_k = C X(t_k) + z_k,
//! ```
//!
//! observed only through the noisy samples `y_k`. Messages are propagated
//! forward and backward over the exact discretization of the dynamics
//! (matrix exponentials and noise Gramians, no time-stepping error), after
//! which the posterior of the state `X(t)`, the clean output `Y(t) = C X(t)`,
//! and the driving input `U(t)` can be queried at arbitrary times, not just
//! at the sample instants.
//!
//! Module map:
//! - [`linalg`]: matrix exponentials, eigendecompositions, Gramian integrals.
//! - [`model`]: system definition, Butterworth construction, exact simulation.
//! - [`messages`]: Gaussian message types and the node-local update rules.
//! - [`smoother`]: forward-backward sweep and arbitrary-time queries.
//! - [`oracle`]: brute-force discrete reference solver used as ground truth.
//! - [`analysis`]: stationary covariance, SNR reports, Monte Carlo error curves.
//! - [`cli`]: command-line front end (config files, CSV I/O).

// Validation compares as `!(x > 0.0)` on purpose: NaN must fail the check,
// which the suggested `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod messages;
pub mod model;
pub mod oracle;
pub mod smoother;

pub use analysis::SnrReport;
pub use error::{Error, Result};
pub use linalg::{Eigendecomposition, GramianMethod, GramianResult};
pub use messages::{InfoGaussian, MomentGaussian, TransitionFactor};
pub use model::{
    butterworth, simulate, ContinuousLTISystem, InitialState, SegmentedSystem, SimulationOutput,
};
pub use oracle::{DiscreteDecomposition, JointLSSolution};
pub use smoother::{EstimateRecord, MeasurementSet, SmootherState};
