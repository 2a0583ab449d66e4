//! Multi-axis vision transformer (MaxViT) built from first principles.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`ops`] and [`graph`]: dense tensors, forward kernels, and a
//!   reverse-mode tape with a central-difference gradient checker.
//! * [`axes`]: block/grid partitions as exact, invertible index transforms.
//! * [`nn`] and [`attention`]: convolution, normalization, squeeze-excitation,
//!   MLP, and relative multi-head attention over blocks and grids.
//! * [`backbone`]: MBConv, the MaxViT block, the T/S/B/L/XL variants, and
//!   exact parameter/MAC accounting.
//! * [`train`]: cross-entropy and earth mover's losses, AdamW, and a
//!   desk-scale training loop on procedurally generated images.

pub mod attention;
pub mod axes;
pub mod backbone;
pub mod check;
pub mod element;
pub mod error;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod par;
pub mod params;
pub mod tensor;
pub mod train;

pub use element::Element;
pub use error::{Error, Result};
pub use graph::{grad_check, Eager, Graph, Tape, Var};
pub use tensor::Tensor;
