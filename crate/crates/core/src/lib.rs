//! Learnable magnitude ranges for photometric image augmentation.
//!
//! Every augmentation operation (brightness, contrast, additive Gaussian
//! noise) samples its magnitude from a learnable interval `[a, b]`. The
//! intervals are trained jointly with a downstream classifier by adding an
//! auxiliary loss that pulls the PSNR between each image and its augmented
//! copy toward a target value. The target value is the single knob that
//! controls augmentation strength and is chosen by a sweep.
//!
//! The crate is `no_std` with `alloc`. File formats, configuration and the
//! command line live in the companion `rangeaug` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod array;
pub mod augops;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod ndgrad;
pub mod optim;
pub mod policy;
pub mod refmodel;
pub mod rng;
pub mod schedule;
pub mod simloss;
pub mod trainer;

pub use array::Array;
pub use error::{Error, Result};
pub use ndgrad::{Graph, NodeId};
