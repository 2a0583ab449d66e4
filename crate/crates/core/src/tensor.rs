//! Dense row-major tensors.
//!
//! A [`Tensor`] is immutable after construction. Storage sits behind an `Arc`
//! so clones are cheap and tensors can be shared freely across threads.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{dim_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides: `stride[k] = product(shape[k+1..])`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return dim_err(format!("zero extent in shape {shape:?}"));
        }
        if numel(&shape) != data.len() {
            return dim_err(format!("shape {shape:?} needs {} elements, got {}", numel(&shape), data.len()));
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Unchecked constructor for kernels that already guarantee the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data: Arc::new(data) }
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Self::from_parts(shape.to_vec(), (0..numel(shape)).map(&mut f).collect())
    }

    /// Values 0, 1, 2, ... in row-major order.
    pub fn arange(shape: &[usize]) -> Self {
        Self::from_fn(shape, |i| T::from_usize(i).unwrap())
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|a| a.as_ref().clone())
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn get(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank");
        let off: usize = index
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                i * s
            })
            .sum();
        self.data[off]
    }

    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer, new shape. The flat data is shared, not copied.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// Materialized axis swap. The result is itself row-major.
    pub fn swapaxes(&self, i: usize, j: usize) -> Result<Self> {
        let idx = swapaxes_gather(&self.shape, i, j)?;
        Ok(idx.apply(self))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return dim_err(format!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
        )
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and data.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().unwrap().to_bits() == b.to_f64().unwrap().to_bits())
    }

    /// Writes the header line `dtype rank d0 d1 ... dk` followed by the
    /// little-endian element buffer.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = format!("{} {}", T::DTYPE, self.rank());
        for d in &self.shape {
            header.push_str(&format!(" {d}"));
        }
        header.push('\n');
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.len() * T::BYTES);
        for &v in self.data.iter() {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        let dtype = parts.next().ok_or_else(|| Error::Format("empty tensor header".into()))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!("dtype {dtype} in file, expected {}", T::DTYPE)));
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| Error::Format("truncated tensor header".into()))?
                .parse()
                .map_err(|e| Error::Format(format!("bad tensor header: {e}")))
        };
        let rank = parse(parts.next())?;
        let shape = (0..rank).map(|_| parse(parts.next())).collect::<Result<Vec<_>>>()?;
        if parts.next().is_some() {
            return Err(Error::Format("trailing fields in tensor header".into()));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != numel(&shape) * T::BYTES {
            return Err(Error::Format(format!("payload of {} bytes does not match shape {shape:?}", bytes.len())));
        }
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        Self::new(shape, data)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 32 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?} ...", &self.data[..32])
        }
    }
}

/// Row gather: view the source as `[rows, inner]` and build the output by
/// copying `src[index[r]]` for each output row `r`.
///
/// Partitions, axis swaps and bias-table lookups are all expressed this way.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gather {
    pub src_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub inner: usize,
    pub index: Vec<usize>,
}

impl Gather {
    pub fn apply<T: Element>(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape(), &self.src_shape[..], "gather source shape");
        let inner = self.inner;
        let src = x.data();
        let mut out = Vec::with_capacity(self.index.len() * inner);
        for &r in &self.index {
            out.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        Tensor::from_parts(self.out_shape.clone(), out)
    }

    /// Adjoint of [`Gather::apply`]: scatter-add output rows back to the source.
    pub fn scatter_add<T: Element>(&self, grad_out: &[T]) -> Vec<T> {
        let inner = self.inner;
        let mut g = vec![T::zero(); numel(&self.src_shape)];
        for (o, &r) in self.index.iter().enumerate() {
            let dst = &mut g[r * inner..(r + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(&grad_out[o * inner..(o + 1) * inner]) {
                *d = *d + s;
            }
        }
        g
    }

    /// True when every source row is read exactly once.
    pub fn is_permutation(&self) -> bool {
        let rows = numel(&self.src_shape) / self.inner;
        if self.index.len() != rows {
            return false;
        }
        let mut seen = vec![false; rows];
        self.index.iter().all(|&r| r < rows && !std::mem::replace(&mut seen[r], true))
    }

    /// Inverse gather of a permutation.
    pub fn inverse(&self) -> Gather {
        debug_assert!(self.is_permutation());
        let mut inv = vec![0; self.index.len()];
        for (o, &r) in self.index.iter().enumerate() {
            inv[r] = o;
        }
        Gather { src_shape: self.out_shape.clone(), out_shape: self.src_shape.clone(), inner: self.inner, index: inv }
    }
}

pub fn swapaxes_gather(shape: &[usize], i: usize, j: usize) -> Result<Gather> {
    let rank = shape.len();
    if i >= rank || j >= rank {
        return dim_err(format!("swapaxes({i}, {j}) out of range for shape {shape:?}"));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let inner: usize = shape[hi + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape.swap(lo, hi);
    let outer = &shape[..=hi];
    let src_strides = strides(outer);
    let mut out_outer = outer.to_vec();
    out_outer.swap(lo, hi);
    let rows = numel(outer);
    let mut index = Vec::with_capacity(rows);
    let mut pos = vec![0usize; out_outer.len()];
    for _ in 0..rows {
        let mut src = 0;
        for (k, &p) in pos.iter().enumerate() {
            let sk = if k == lo {
                hi
            } else if k == hi {
                lo
            } else {
                k
            };
            src += p * src_strides[sk];
        }
        index.push(src);
        for k in (0..pos.len()).rev() {
            pos[k] += 1;
            if pos[k] < out_outer[k] {
                break;
            }
            pos[k] = 0;
        }
    }
    Ok(Gather { src_shape: shape.to_vec(), out_shape, inner, index })
}
