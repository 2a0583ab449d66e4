//! Checkpoints: one binary file per tensor plus a JSON manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::model::MaxVit;
use super::variant::VariantSpec;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: VariantSpec,
    pub seed: u64,
    pub num_classes: usize,
    pub dtype: String,
    /// Parameters in enumeration order.
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

fn write_tensor<T: Element>(dir: &Path, file: &str, t: &Tensor<T>) -> Result<()> {
    t.write_to(BufWriter::new(File::create(dir.join(file))?))
}

pub fn save<T: Element>(dir: &Path, model: &MaxVit, store: &ParamStore<T>, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(store.len());
    for (i, e) in store.entries().iter().enumerate() {
        let file = format!("param_{i:05}.bin");
        write_tensor(dir, &file, &e.tensor)?;
        params.push(TensorEntry { name: e.name.clone(), shape: e.tensor.shape().to_vec(), file });
    }
    let mut buffers = Vec::with_capacity(store.buffers().len());
    for (i, (name, t)) in store.buffers().iter().enumerate() {
        let file = format!("buffer_{i:05}.bin");
        write_tensor(dir, &file, t)?;
        buffers.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), file });
    }
    let manifest = Manifest {
        variant: model.spec.clone(),
        seed,
        num_classes: model.num_classes,
        dtype: T::DTYPE.to_string(),
        params,
        buffers,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST))?), &manifest)?;
    Ok(manifest)
}

fn read_tensor<T: Element>(dir: &Path, e: &TensorEntry) -> Result<Tensor<T>> {
    let t = Tensor::<T>::read_from(BufReader::new(File::open(dir.join(&e.file))?))?;
    if t.shape() != e.shape.as_slice() {
        return Err(Error::Format(format!("{}: shape {:?} does not match manifest {:?}", e.file, t.shape(), e.shape)));
    }
    Ok(t)
}

/// Rebuilds the model from the manifest and overwrites every tensor.
pub fn load<T: Element>(dir: &Path) -> Result<(MaxVit, ParamStore<T>, Manifest)> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST))?))?;
    let (model, mut store) = MaxVit::build::<T>(&manifest.variant, manifest.num_classes, manifest.seed)?;
    if manifest.params.len() != store.len() || manifest.buffers.len() != store.buffers().len() {
        return Err(Error::Format("manifest does not match the rebuilt model".into()));
    }
    for (i, e) in manifest.params.iter().enumerate() {
        if store.entry(ParamId(i)).name != e.name {
            return Err(Error::Format(format!(
                "parameter {i} is {}, manifest says {}",
                store.entry(ParamId(i)).name,
                e.name
            )));
        }
        store.set(ParamId(i), read_tensor(dir, e)?)?;
    }
    for (i, e) in manifest.buffers.iter().enumerate() {
        store.set_buffer(BufferId(i), read_tensor(dir, e)?)?;
    }
    Ok((model, store, manifest))
}
