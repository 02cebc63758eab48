//! The `CMP1` container and exact payload accounting.
//!
//! ```text
//! "CMP1" | version u16 | layer_count u16
//! per layer:
//!   name_len u16 | name | p u64 | k u64 | b u8 | r u32 | zero_cluster u8 (0xFF = none)
//!   codebook r × f32
//!   assignments ⌈k·b / 8⌉ bytes, b bits each, most significant bit first
//!   support_len u32 | arithmetic-coded varint deltas
//! ```
//!
//! Support deltas are 1-based: `d_1 = s_1 + 1`, `d_j = s_j − s_{j−1}`.
//! All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{arith, varint};
use crate::model::{ceil_log2, CompressedTriplet, LayerTriplet};
use crate::wire::{put_name, Reader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CMP1";
const VERSION: u16 = 1;
const NO_ZERO: u8 = 0xFF;

/// Measured payload sizes of one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes {
    pub name: String,
    pub len: u64,
    pub k: u64,
    pub r: u64,
    /// `|S|_c`: 8 × arithmetic-coded support bytes.
    pub support_bits: u64,
    /// `|C|_c = 32·r`.
    pub codebook_bits: u64,
    /// `k·⌈log2 r⌉`.
    pub assignment_bits: u64,
    /// Zero bits that pad the assignment payload to a whole byte.
    pub padding_bits: u64,
}

impl LayerSizes {
    pub fn raw_compressed_bits(&self) -> u64 {
        self.support_bits + self.codebook_bits + self.assignment_bits
    }
}

/// Code length of a triplet, the `|h|_c` fed into the bound.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodedSizes {
    pub layers: Vec<LayerSizes>,
    pub support_bits: u64,
    pub codebook_bits: u64,
    pub assignment_bits: u64,
    pub raw_compressed_bits: u64,
    pub padding_bits: u64,
    /// Bytes of support, codebook and assignment payload; headers excluded.
    pub payload_bytes: u64,
}

impl CodedSizes {
    fn from_layers(layers: Vec<LayerSizes>) -> Self {
        let sum = |f: fn(&LayerSizes) -> u64| layers.iter().map(f).sum::<u64>();
        let support_bits = sum(|l| l.support_bits);
        let codebook_bits = sum(|l| l.codebook_bits);
        let assignment_bits = sum(|l| l.assignment_bits);
        let padding_bits = sum(|l| l.padding_bits);
        let raw = support_bits + codebook_bits + assignment_bits;
        CodedSizes {
            layers,
            support_bits,
            codebook_bits,
            assignment_bits,
            raw_compressed_bits: raw,
            padding_bits,
            payload_bytes: (raw + padding_bits) / 8,
        }
    }

    pub fn kib(&self) -> f64 {
        self.raw_compressed_bits as f64 / 8192.0
    }
}

/// Varint bytes of the 1-based support deltas.
pub fn support_delta_bytes(support: &[u64]) -> Vec<u8> {
    let mut prev = None;
    let mut out = Vec::with_capacity(support.len() * 2);
    for &s in support {
        let d = match prev {
            None => s + 1,
            Some(p) => s - p,
        };
        varint::encode(d, &mut out);
        prev = Some(s);
    }
    out
}

fn pack(assignments: &[u32], bits: u32) -> Vec<u8> {
    let total = assignments.len() as u64 * bits as u64;
    let mut out = vec![0u8; total.div_ceil(8) as usize];
    let mut pos = 0u64;
    for &q in assignments {
        for b in (0..bits).rev() {
            if (q >> b) & 1 == 1 {
                out[(pos / 8) as usize] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

fn unpack(bytes: &[u8], k: usize, bits: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(k);
    let mut pos = 0u64;
    for _ in 0..k {
        let mut q = 0u32;
        for _ in 0..bits {
            let bit = (bytes[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
            q = (q << 1) | bit as u32;
            pos += 1;
        }
        out.push(q);
    }
    out
}

fn encode_layer(l: &LayerTriplet, out: &mut Vec<u8>) -> Result<LayerSizes> {
    let r = l.r() as u64;
    if r > 1 << 16 {
        return Err(Error::MalformedTriplet(format!("{}: codebook of {r} entries exceeds 2^16", l.name)));
    }
    let zero = match l.zero_cluster {
        None => NO_ZERO,
        Some(z) if z < NO_ZERO as u32 => z as u8,
        Some(z) => return Err(Error::MalformedTriplet(format!("{}: zero cluster {z} not encodable", l.name))),
    };
    let bits = ceil_log2(r);
    put_name(out, &l.name)?;
    out.extend_from_slice(&l.len.to_le_bytes());
    out.extend_from_slice(&(l.k() as u64).to_le_bytes());
    out.push(bits as u8);
    out.extend_from_slice(&(r as u32).to_le_bytes());
    out.push(zero);
    for c in &l.codebook {
        out.extend_from_slice(&c.to_le_bytes());
    }
    let packed = pack(&l.assignments, bits);
    out.extend_from_slice(&packed);
    let support = arith::encode(&support_delta_bytes(&l.support));
    let support_len = u32::try_from(support.len())
        .map_err(|_| Error::MalformedTriplet(format!("{}: support stream too long", l.name)))?;
    out.extend_from_slice(&support_len.to_le_bytes());
    out.extend_from_slice(&support);
    let assignment_bits = l.k() as u64 * bits as u64;
    Ok(LayerSizes {
        name: l.name.clone(),
        len: l.len,
        k: l.k() as u64,
        r,
        support_bits: 8 * support.len() as u64,
        codebook_bits: 32 * r,
        assignment_bits,
        padding_bits: 8 * packed.len() as u64 - assignment_bits,
    })
}

/// Serializes `t` and reports the exact payload sizes.
pub fn encode_triplet(t: &CompressedTriplet) -> Result<(Vec<u8>, CodedSizes)> {
    t.validate()?;
    let count = u16::try_from(t.layers.len()).map_err(|_| Error::MalformedTriplet("more than 65535 layers".into()))?;
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    let sizes = t
        .layers
        .iter()
        .map(|l| encode_layer(l, &mut out))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, CodedSizes::from_layers(sizes)))
}

/// Sizes only.
pub fn coded_sizes(t: &CompressedTriplet) -> Result<CodedSizes> {
    encode_triplet(t).map(|(_, s)| s)
}

fn decode_support(stream: &[u8], k: usize, len: u64, name: &str, offset: u64) -> Result<Vec<u64>> {
    let bad = |msg: String| Error::format(offset, format!("layer {name}: {msg}"));
    let mut dec = arith::Decoder::new(stream)?;
    let mut asm = varint::Assembler::default();
    let mut support = Vec::with_capacity(k);
    let mut next = 0u64;
    let max_symbols = k.saturating_mul(10);
    let mut symbols = 0usize;
    while support.len() < k {
        if symbols >= max_symbols {
            return Err(bad("support stream does not terminate".into()));
        }
        symbols += 1;
        if let Some(d) = asm.push(dec.decode()?)? {
            if d == 0 {
                return Err(Error::MalformedTriplet(format!("{name}: support not strictly increasing")));
            }
            let s = next
                .checked_add(d - 1)
                .filter(|&s| s < len)
                .ok_or_else(|| Error::MalformedTriplet(format!("{name}: support index out of range")))?;
            support.push(s);
            next = s + 1;
        }
    }
    dec.finish().map_err(|e| bad(e.to_string()))?;
    Ok(support)
}

pub fn decode_triplet(bytes: &[u8]) -> Result<CompressedTriplet> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported CMP1 version {version}")));
    }
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let name = r.name(&format!("layer {i} name"))?;
        let what = |field: &str| format!("layer {i} ({name}) {field}");
        let len = r.u64(&what("p"))?;
        let k = r.u64(&what("k"))?;
        if k > len {
            return Err(Error::format(r.offset(), format!("layer {name}: k = {k} exceeds p = {len}")));
        }
        let bits = r.u8(&what("b"))? as u32;
        let codebook_len = r.u32(&what("r"))? as u64;
        if codebook_len == 0 || codebook_len > 1 << 16 || ceil_log2(codebook_len) != bits {
            return Err(Error::format(
                r.offset(),
                format!("layer {name}: b = {bits} inconsistent with r = {codebook_len}"),
            ));
        }
        let zero = r.u8(&what("zero cluster"))?;
        let codebook = r.f32s(codebook_len as usize, &what("codebook"))?;
        let k = usize::try_from(k).map_err(|_| Error::format(r.offset(), "k too large"))?;
        let packed_len = (k as u64 * bits as u64).div_ceil(8) as usize;
        let packed = r.bytes(packed_len, &what("assignments"))?;
        let assignments = unpack(packed, k, bits);
        if pack(&assignments, bits) != packed {
            return Err(Error::format(r.offset(), format!("layer {name}: nonzero assignment padding")));
        }
        let support_len = r.u32(&what("support length"))? as usize;
        let at = r.offset();
        let stream = r.bytes(support_len, &what("support stream"))?;
        let support = decode_support(stream, k, len, &name, at)?;
        let layer = LayerTriplet {
            name,
            len,
            support,
            codebook,
            assignments,
            zero_cluster: (zero != NO_ZERO).then_some(zero as u32),
        };
        layer.validate()?;
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes", r.remaining())));
    }
    Ok(CompressedTriplet { layers })
}

pub fn save_triplet(t: &CompressedTriplet, path: impl AsRef<Path>) -> Result<CodedSizes> {
    let (bytes, sizes) = encode_triplet(t)?;
    std::fs::write(path, bytes)?;
    Ok(sizes)
}

pub fn load_triplet(path: impl AsRef<Path>) -> Result<CompressedTriplet> {
    decode_triplet(&std::fs::read(path)?)
}
