//! Losses, optimizer, and the desk-scale training loop.

pub mod data;
pub mod histogram;
pub mod optim;
pub mod toy;

pub use data::{blob_dataset, Dataset};
pub use histogram::{emd_loss, ScoreHistogram, DEFAULT_BINS};
pub use optim::{clip_grad_norm, AdamW};
pub use toy::{train_toy, write_trace_csv, ToyConfig, ToyRun};
