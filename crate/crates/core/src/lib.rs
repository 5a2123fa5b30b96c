//! Dense networks with plain, shortcut and residual topologies, trained
//! full-batch on MNIST while tracking the mutual information between the
//! first hidden layer and the input of the softmax layer.

// NaN must fail validation, hence `!(x > 0.0)` style checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod mi;
pub mod mnist;
pub mod nn;
pub mod numerics;
pub mod optim;
pub mod topology;

pub use error::{Error, Result};
pub use numerics::{Matrix, SeededRng};
