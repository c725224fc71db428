//! Exact analysis of the M/G/1 processor-sharing queue with permanent jobs.
//!
//! The model: jobs arrive in a Poisson stream with rate lambda, bring i.i.d.
//! service requirements, and share a single server equally with K permanent
//! jobs that never finish. This crate computes, without sampling error,
//!
//! * the stationary sojourn-time moments of a (tagged) job of size u,
//!   conditional on that size, to arbitrary order,
//! * the stationary queue-length distribution of the standard jobs,
//! * the Laplace transform of the sojourn time and of the busy period,
//!
//! and cross-checks all of it against a discrete-event simulator of the same
//! dynamics ([`sim`]).
//!
//! The analytic route works on a uniform grid: the stationary workload law of
//! the matching FIFO queue is accumulated from its ladder-height expansion,
//! its convolution powers feed a series kernel, and an alternating recursion
//! turns transform coefficients into moments. Everything downstream of a
//! [`kernel::KernelWorkspace`] reuses those tabulated grids.
//!
//! Entry points:
//! * [`model::ModelParams`] fixes (lambda, service law, K).
//! * [`moments::moments_upto`] and [`moments::k_moments`] produce moment
//!   tables; [`moments::conditional_mean`] and
//!   [`moments::conditional_variance`] are direct closed-ish forms.
//! * [`mg1::BusyPeriodSolver`] and [`mg1::qlen_pmf`] cover the busy period
//!   and queue length.
//! * [`sim::run`] and [`sim::estimate_lst`] drive the simulator.

pub mod error;
pub mod grid;
pub mod kernel;
pub mod mg1;
pub mod model;
pub mod moments;
pub mod service;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{GridFunction, GriddedDf};
pub use kernel::KernelWorkspace;
pub use model::ModelParams;
pub use moments::MomentTable;
pub use service::ServiceDistribution;
pub use sim::{SimConfig, SimResult};
