//! Consensus + innovations (C+I) distributed parameter estimation over
//! time-varying sensor graphs.
//!
//! The crate simulates the stacked C+I estimator, computes observability
//! Gramians and the associated Lyapunov-function bounds, and tunes the
//! estimator gains by solving a small L2-gain LMI feasibility problem with
//! an eigenvalue oracle. A mass-spring-damper network serves as the
//! built-in benchmark.
//!
//! Modules mirror the pipeline:
//! * [`netgraph`] — piecewise-constant communication graphs, incidence and
//!   Laplacian matrices, connectivity-on-average certification;
//! * [`excitation`] — regressor banks, cooperative persistency-of-excitation
//!   windows and the scalar excitation constants;
//! * [`estimator`] — the stacked estimator dynamics and deterministic RK4
//!   simulation of the nominal and disturbed error systems;
//! * [`analysis`] — observability Gramians (quadrature and ODE forms),
//!   closed-form Gramian bounds, the strong Lyapunov function, convergence
//!   and ISS gain bounds;
//! * [`tuner`] — the block LMI, PSD feasibility oracle, gamma-minimizing
//!   bisection and gain selection;
//! * [`bench`] — the six-agent mass-spring-damper benchmark, disturbance
//!   scenarios and the measured L2 metric;
//! * [`config`] — JSON run configuration shared with the CLI;
//! * [`report`] — SVG rendering of sweep and trajectory results.

// Positivity guards use `!(x > 0.0)` rather than `x <= 0.0` so NaN inputs
// are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bench;
pub mod config;
mod error;
pub mod estimator;
pub mod excitation;
pub mod linalg;
pub mod netgraph;
pub(crate) mod opt;
pub mod pipeline;
pub mod report;
pub mod stepper;
pub mod tuner;

pub use error::{Error, Result};
