//! Sequential latent-variable modeling toolkit.
//!
//! Two model families over panel time series partitioned into named
//! observation sets:
//!
//! - a linear dynamic probabilistic CCA with block-structured latent chains,
//!   fit exactly by EM with Kalman filtering and RTS smoothing
//!   ([`lds`]), and
//! - its deep generalization with neural gated transitions, neural
//!   emissions, a structured recurrent inference network, optional KL
//!   annealing and affine autoregressive flow posteriors, trained by
//!   stochastic gradient ascent on the ELBO ([`model`], [`flows`],
//!   [`training`]).
//!
//! Both share the data pipeline in [`data`] (sliding windows, train-split
//! normalization, RMSE, reconstruction-band export) and the reverse-mode
//! autodiff substrate in [`diffmath`].

pub mod checkpoint;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod flows;
pub mod lds;
pub mod model;
pub mod nets;
pub mod training;

pub use error::{Error, Result};
