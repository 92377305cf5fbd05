//! Nonequilibrium linear response of finite open quantum systems.
//!
//! The pipeline runs from a Liouville-space master equation to the split of
//! the linear response into a detailed-balance-preserving part and a part
//! driven by the stationary curl flux:
//!
//! * [`liouville`]: vectorization, superoperators, secular Lindblad builder;
//! * [`reduction`]: coherence elimination, effective population rates, steady
//!   states and propagators;
//! * [`flux`]: curl-flux decomposition, loop extraction, split operators;
//! * [`response`]: Green's functions, response functions, fluctuation spectra;
//! * [`junction`]: the three-level molecular junction with its closed forms.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flux;
pub mod junction;
pub mod linalg;
pub mod liouville;
pub mod reduction;
pub mod response;

pub use error::{Error, Result};
pub use num_complex::Complex64;
