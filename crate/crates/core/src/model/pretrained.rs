//! Loading ImageNet ResNet-50 weights from a safetensors file.
//!
//! Tensor names are the torchvision ones (`conv1.weight`,
//! `layer3.4.bn2.running_var`, ...). They are mapped onto the model by
//! prefixing `encoder.backbone.`. Classifier weights (`fc.*`) and
//! `num_batches_tracked` counters are ignored.

use std::path::Path;

use mstnet_tensor::{Float, Tensor};
use safetensors::{Dtype, SafeTensors};

use super::net::Model;
use crate::config::Backbone;
use crate::{Error, Result};

pub const BACKBONE_PREFIX: &str = "encoder.backbone.";

fn decode<T: Float>(view: &safetensors::tensor::TensorView<'_>, name: &str) -> Result<Vec<T>> {
    let bytes = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(bytes.chunks_exact(4).map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect()),
        Dtype::F64 => Ok(bytes.chunks_exact(8).map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap()))).collect()),
        other => Err(Error::Checkpoint(format!("pretrained tensor '{name}' has unsupported dtype {other:?}"))),
    }
}

/// Copies every backbone tensor from `path` into `model`. Returns the number
/// of tensors loaded. Every backbone parameter must be present.
pub fn load_backbone<T: Float>(model: &mut Model<T>, path: &Path) -> Result<usize> {
    if model.config().backbone != Backbone::ResNet50 {
        return Err(Error::Config("pretrained weights only apply to the resnet50 backbone".into()));
    }
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "pretrained weight file not found"),
        });
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut loaded = 0;
    for (name, view) in st.tensors() {
        if name.starts_with("fc.") || name.ends_with("num_batches_tracked") {
            continue;
        }
        let target = if name.starts_with(BACKBONE_PREFIX) { name.clone() } else { format!("{BACKBONE_PREFIX}{name}") };
        let id = model
            .store
            .id_of(&target)
            .ok_or_else(|| Error::Checkpoint(format!("pretrained tensor '{name}' has no counterpart in the model")))?;
        let shape = model.store.get(id).shape();
        let numel: usize = view.shape().iter().product();
        if numel != shape.numel() {
            return Err(Error::Checkpoint(format!(
                "pretrained tensor '{name}' has shape {:?}, model expects {:?}",
                view.shape(),
                shape.dims()
            )));
        }
        model.store.set(id, Tensor::from_vec(shape, decode(&view, &name)?))?;
        loaded += 1;
    }
    let expected = model.store.entries().filter(|(_, e)| e.name.starts_with(BACKBONE_PREFIX)).count();
    if loaded != expected {
        return Err(Error::Checkpoint(format!("pretrained file provides {loaded} of {expected} backbone tensors")));
    }
    Ok(loaded)
}
