//! Structural estimation of dynamic discrete choice models with state
//! aggregation driven by estimated Q-functions.
//!
//! Pipeline: simulate or load transitions, estimate the agent Q-function
//! ([`irl`]), cluster states on their Q-vectors ([`aggregation`]), and run
//! nested fixed-point maximum likelihood on the aggregated states ([`nfmle`]).
//! [`diagnostics`] evaluates the accompanying error bounds on small instances.

pub mod aggregation;
pub mod bench;
pub mod data;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod irl;
pub mod mdp;
pub mod nfmle;
pub mod optim;

pub use error::{Error, Result};
