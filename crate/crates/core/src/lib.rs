//! Long-tailed distribution adaptation.
//!
//! A long-tailed training set is treated as an *unbalanced domain* and the
//! balanced test distribution as the *balanced domain*. Training jointly
//! minimizes the empirical risk of both domains (two classifier heads over a
//! shared encoder, balanced one importance-weighted by `1 / p_u(y)`), mixes
//! them with a self-adaptive factor driven by the error gap between the heads,
//! and shrinks the domain gap with cosine intra/inter-class regularizers on a
//! projection head.
//!
//! This crate is `no_std` + `alloc`: it carries the numerics only. File
//! formats, configuration and the command-line front end live in `lda-forge`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod balance;
pub mod data;
mod error;
pub mod gradcheck;
pub mod losses;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
