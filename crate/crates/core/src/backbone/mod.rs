//! MBConv, the MaxViT block, variant layouts, and cost accounting.

pub mod checkpoint;
pub mod flops;
pub mod golden;
pub mod mbconv;
pub mod model;
pub mod variant;

pub use flops::{FlopReport, LayerMacs, StageMacs};
pub use mbconv::MbConv;
pub use model::{MaxVit, MaxVitBlock, Stage, SubLayer};
pub use variant::{default_partition_fits, BlockOrder, LayerKind, StageSpec, VariantName, VariantSpec};
