//! Learnable FIR filterbank front-ends for 1D signal classification.
#![no_std]

// `num_traits::Float` supplies float math without std. Its imports are
// allowed to go unused because std's inherent methods win whenever std is
// linked anywhere in the build.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod frontend;
pub mod interpret;
pub mod model;
pub mod signal;
pub mod training;
