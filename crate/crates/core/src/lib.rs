//! Balance-regularized simulation-based inference.
//!
//! This crate holds the allocation-only algorithmic core: a small reverse-mode
//! autodiff engine, the benchmark simulators, conditional neural spline flows,
//! the NRE / NRE-C / NPE / RNPE objectives with their balance regularizer, and
//! the calibration diagnostics (expected coverage, balancing error, nominal
//! log posterior). It is `no_std` and only needs `alloc`; file formats, the
//! sweep harness and the CLI live in the `bsbi` crate.
//!
//! Every surrogate posterior implements [`objectives::Surrogate`], which is the
//! interface the diagnostics consume.

#![no_std]
// Float methods come from `num_traits::Float`. Whenever std is linked into the
// build (tests, or a dependency with its `std` feature unified on) the inherent
// methods win and the trait imports look unused.
#![allow(unused_imports)]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod objectives;
pub mod rng;
pub mod simulators;
pub mod special;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::{stream_rng, SbiRng, Stream};
