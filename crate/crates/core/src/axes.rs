//! Block and grid partitions of channels-last feature maps.
//!
//! Both are pure permutations of pixel positions, expressed as [`Gather`]
//! tables so the same index math drives inference, autodiff, and the
//! `dump-indices` debug output.
//!
//! * `block(x, P)`: `(B,H,W,C) → (B, HW/P², P², C)`. Non-overlapping P×P
//!   windows in row-major window order, row-major inside each window.
//! * `grid(x, G)`: `(B,H,W,C) → (B, HW/G², G², C)`. Each group collects the
//!   pixels that share one offset inside the (H/G)×(W/G) lattice cells, so a
//!   group is a G×G sample of the whole image with stride (H/G, W/G).

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Gather, Tensor};

pub const DEFAULT_PARTITION: usize = 7;

/// Window size `P` for block attention and grid size `G` for grid attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub window_size: usize,
    pub grid_size: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { window_size: DEFAULT_PARTITION, grid_size: DEFAULT_PARTITION }
    }
}

impl PartitionSpec {
    pub fn uniform(size: usize) -> Self {
        Self { window_size: size, grid_size: size }
    }

    /// Errors unless both sizes divide both spatial extents.
    pub fn check(&self, h: usize, w: usize) -> Result<()> {
        check_divisible(h, w, self.window_size)?;
        check_divisible(h, w, self.grid_size)
    }
}

pub fn check_divisible(h: usize, w: usize, size: usize) -> Result<()> {
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(Error::Partition { h, w, size });
    }
    Ok(())
}

fn bhwc(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [b, h, w, c] => Ok([b, h, w, c]),
        _ => dim_err(format!("expected (B,H,W,C), got {shape:?}")),
    }
}

/// Source pixel `(y, x)` for window `wi`, in-window position `pi`, with
/// rectangular `th×tw` tiles over an image `w` pixels wide.
#[inline]
fn tile_source(wi: usize, pi: usize, w: usize, th: usize, tw: usize) -> (usize, usize) {
    let nw = w / tw;
    ((wi / nw) * th + pi / tw, (wi % nw) * tw + pi % tw)
}

/// Source pixel `(y, x)` for group `gi`, in-group position `pi`.
#[inline]
fn grid_source(gi: usize, pi: usize, h: usize, w: usize, g: usize) -> (usize, usize) {
    let (th, tw) = (h / g, w / g);
    let (ty, tx) = (gi / tw, gi % tw);
    let (gy, gx) = (pi / g, pi % g);
    (gy * th + ty, gx * tw + tx)
}

fn build(
    shape: &[usize],
    groups: usize,
    per_group: usize,
    source: impl Fn(usize, usize) -> (usize, usize),
) -> Result<Gather> {
    let [b, h, w, c] = bhwc(shape)?;
    let mut index = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        for gi in 0..groups {
            for pi in 0..per_group {
                let (y, x) = source(gi, pi);
                index.push((bi * h + y) * w + x);
            }
        }
    }
    Ok(Gather { src_shape: shape.to_vec(), out_shape: vec![b, groups, per_group, c], inner: c, index })
}

/// Rectangular `th×tw` window partition.
pub fn block_tiles_gather(shape: &[usize], th: usize, tw: usize) -> Result<Gather> {
    let [_, h, w, _] = bhwc(shape)?;
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 {
        return Err(Error::Partition { h, w, size: if th == 0 || h % th != 0 { th } else { tw } });
    }
    build(shape, (h / th) * (w / tw), th * tw, |wi, pi| tile_source(wi, pi, w, th, tw))
}

pub fn block_gather(shape: &[usize], p: usize) -> Result<Gather> {
    let [_, h, w, _] = bhwc(shape)?;
    check_divisible(h, w, p)?;
    block_tiles_gather(shape, p, p)
}

pub fn grid_gather(shape: &[usize], g: usize) -> Result<Gather> {
    let [_, h, w, _] = bhwc(shape)?;
    check_divisible(h, w, g)?;
    build(shape, (h / g) * (w / g), g * g, |gi, pi| grid_source(gi, pi, h, w, g))
}

fn partitioned_shape(shape: &[usize], h: usize, w: usize, size: usize) -> Result<[usize; 4]> {
    let [b, n, l, c] = bhwc(shape)?;
    check_divisible(h, w, size)?;
    if n * size * size != h * w || l != size * size {
        return Err(Error::Partition { h, w, size });
    }
    Ok([b, h, w, c])
}

pub fn unblock_gather(shape: &[usize], h: usize, w: usize, p: usize) -> Result<Gather> {
    let orig = partitioned_shape(shape, h, w, p)?;
    Ok(block_gather(&orig, p)?.inverse())
}

pub fn ungrid_gather(shape: &[usize], h: usize, w: usize, g: usize) -> Result<Gather> {
    let orig = partitioned_shape(shape, h, w, g)?;
    Ok(grid_gather(&orig, g)?.inverse())
}

pub fn block<T: Element>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    Ok(block_gather(x.shape(), p)?.apply(x))
}

pub fn unblock<T: Element>(x: &Tensor<T>, h: usize, w: usize, p: usize) -> Result<Tensor<T>> {
    Ok(unblock_gather(x.shape(), h, w, p)?.apply(x))
}

pub fn grid<T: Element>(x: &Tensor<T>, g: usize) -> Result<Tensor<T>> {
    Ok(grid_gather(x.shape(), g)?.apply(x))
}

pub fn ungrid<T: Element>(x: &Tensor<T>, h: usize, w: usize, g: usize) -> Result<Tensor<T>> {
    Ok(ungrid_gather(x.shape(), h, w, g)?.apply(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Block,
    Grid,
}

/// Flat source pixel index (`y·W + x`) of every output position, grouped
/// per window (block) or per group (grid).
pub fn partition_indices(kind: PartitionKind, h: usize, w: usize, size: usize) -> Result<Vec<Vec<usize>>> {
    let g = match kind {
        PartitionKind::Block => block_gather(&[1, h, w, 1], size)?,
        PartitionKind::Grid => grid_gather(&[1, h, w, 1], size)?,
    };
    let per = g.out_shape[2];
    Ok(g.index.chunks(per).map(<[usize]>::to_vec).collect())
}
