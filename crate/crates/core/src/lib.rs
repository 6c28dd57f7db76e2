//! Temporal knowledge propagation for image-to-video retrieval.
//!
//! An image network and a video network (the same trunk plus non-local
//! attention across the frames of a clip) are trained together with identity
//! classification, a four-way batch-hard triplet loss, and two propagation
//! losses that pull the image network's per-frame features toward the video
//! network's per-frame features, both directly and through their pairwise
//! distance structure. Everything runs on a small reverse-mode tape over
//! dense `f64` arrays.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the command
//! line live in the `tkp` crate.

#![no_std]

extern crate alloc;

pub mod checks;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
