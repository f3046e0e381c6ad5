//! Configuration auto-tuning for large configurable systems.
//!
//! The workflow is: describe the parameter space ([`paramspace`]), sample and
//! evaluate random configurations ([`sampling`], [`targets`], [`store`]),
//! rank parameter importance with the Lasso path ([`preprocess`],
//! [`ranking`]), then tune the top-K parameters with Gaussian-process
//! Bayesian optimization ([`gp`], [`optimizer`]).

pub mod cli;
pub mod error;
pub mod gp;
pub mod optimizer;
pub mod paramspace;
pub mod preprocess;
pub mod ranking;
pub mod sampling;
pub mod store;
pub mod targets;

pub use error::{Error, Result};
pub use paramspace::{Configuration, ParameterSpace, Value};
