//! Grouped-convolution networks, their exact cost accounting, reverse-mode
//! training with knowledge distillation, and the experiment harness behind
//! the `rdl` command line tool.
//!
//! The crate is organized bottom-up:
//! - [`tensor`], [`kernels`], [`graph`]: dense tensors, the convolution and
//!   linear kernels, and a small reverse-mode tape over them.
//! - [`archspec`], [`costmodel`]: declarative network specs (grouping
//!   policies, residual/non-residual twins) and exact parameter/FLOP counts.
//! - [`model`], [`io`], [`data`]: lowering a spec to parameters and a
//!   forward program, checkpoint serialization, datasets and augmentation.
//! - [`distill`], [`experiments`]: SGD training with temperature-scaled
//!   distillation, and the residual-vs-distillation experiment matrix.
//!
//! Every run is bitwise reproducible for a fixed seed and thread count:
//! parallelism only ever spans disjoint output slices and every reduction
//! accumulates sequentially.

pub mod archspec;
pub mod costmodel;
pub mod data;
pub mod distill;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod model;
pub mod tensor;
pub mod util;
