//! Human–exoskeleton squat simulation and control.

pub mod controller;
pub mod coupling;
pub mod dnn;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod nmpc;
pub mod qp;
pub mod reference;

pub use error::{Error, Result};
