//! Inertial particle dynamics with the Basset history force.
//!
//! The equations are integrated in their weak (integral) form with product
//! integration of the Abel kernel; see the README for the model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod flowfield;
pub mod fractional;
pub mod sensitivity;
pub mod solver;

pub use error::{Error, Result};
