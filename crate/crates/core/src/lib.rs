//! Few-shot image classification toolkit built around prototypical networks.
//!
//! The crate is self-contained: it ships its own reverse-mode autodiff tensor
//! core ([`tensor`]), a small convolutional embedding network ([`nn`]), a
//! synthetic shape-vs-texture benchmark generator ([`synthdata`]), episodic
//! samplers ([`episodes`]), the prototypical classifier with support- and
//! query-side test-time augmentation ([`protonet`]), a training/evaluation
//! harness ([`harness`]), and a command-line front end ([`cli`]).
//!
//! Everything is deterministic given a seed: datasets, training runs,
//! evaluation reports, and serialized artifacts reproduce byte-for-byte.

#![forbid(unsafe_code)]

pub mod augment;
pub mod cli;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod image;
pub mod nn;
pub mod protonet;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
pub use tensor::Tensor;
