//! Kriging surrogate models with adaptive sampling.
//!
//! Modules:
//! - [`designspace`]: domains, normalization, TPLHD designs, Monte Carlo pools
//! - [`kernels`]: correlation functions and matrices
//! - [`gpcore`]: ordinary/universal Kriging, likelihood fit, leave-one-out
//! - [`multifidelity`]: hierarchical Kriging
//! - [`plsreduce`]: PLS-reduced kernels
//! - [`adaptive`]: infill strategies and the sampling loop
//! - [`benchfns`]: analytic test problems
//! - [`dynamics`]: friction oscillator, sticking time, Lyapunov exponents
//! - [`metrics`]: validation error measures
//! - [`harness`]: experiment configs, runs and artifacts

pub mod adaptive;
pub mod benchfns;
pub mod designspace;
pub mod dynamics;
pub mod error;
pub mod gpcore;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod multifidelity;
pub mod optim;
pub mod plsreduce;

pub use error::{Error, Result};
