#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod geometry;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod probmap;
pub mod proposals;
pub mod synth;

pub use error::{Error, Result};
