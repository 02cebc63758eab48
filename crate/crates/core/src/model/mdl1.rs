//! `MDL1` weight files.
//!
//! ```text
//! "MDL1" | version u16 | layer_count u16 |
//!   per layer: name_len u16 | name (UTF-8) | ndims u8 | dims u32 × ndims | values f32 × prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Values are stored as raw IEEE-754
//! bit patterns, so signed zeros and subnormals survive a round trip. The
//! architecture is kept next to the weights as a text descriptor with the
//! `.arch` extension.

use std::fs;
use std::path::{Path, PathBuf};

use super::arch::ArchSpec;
use super::tensor::{LayerTensor, Model};
use crate::wire::{put_f32s, put_name, Reader};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MDL1";
pub const VERSION: u16 = 1;

pub fn encode(layers: &[LayerTensor]) -> Result<Vec<u8>> {
    let count = u16::try_from(layers.len())
        .map_err(|_| Error::InvalidInput(format!("{} layers exceed the MDL1 limit", layers.len())))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for layer in layers {
        layer.validate()?;
        put_name(&mut out, &layer.name)?;
        let ndims = u8::try_from(layer.shape.len())
            .map_err(|_| Error::InvalidInput(format!("{}: too many dims", layer.name)))?;
        out.push(ndims);
        for &d in &layer.shape {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidInput(format!("{}: dim {d} exceeds u32", layer.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f32s(&mut out, &layer.values);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<LayerTensor>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported MDL1 version {version}")));
    }
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let name = r.name(&format!("layer {i} name"))?;
        let ndims = r.u8(&format!("layer {i} ({name}) ndims"))? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u32(&format!("layer {i} ({name}) dims"))? as usize);
        }
        let at = r.offset();
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("layer {i} ({name}): shape overflows")))?;
        let values = r.f32s(len, &format!("layer {i} ({name}) values"))?;
        let tensor = LayerTensor { name, shape, values };
        tensor
            .validate()
            .map_err(|e| Error::format(at, e.to_string()))?;
        layers.push(tensor);
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes after last layer", r.remaining()),
        ));
    }
    Ok(layers)
}

/// Path of the architecture descriptor stored alongside an `MDL1` file.
pub fn arch_path(path: &Path) -> PathBuf {
    path.with_extension("arch")
}

pub fn save_model(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.validate()?;
    fs::write(path, encode(&m.layers)?)?;
    fs::write(arch_path(path), m.arch.to_string())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let layers = decode(&fs::read(path)?)?;
    let arch: ArchSpec = fs::read_to_string(arch_path(path))?.parse()?;
    Model::new(arch, layers)
}
