#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod factor;
pub mod linalg;
pub mod markov;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod tasks;
pub mod wiener;

pub use error::{Error, Result};
