//! LEB128 varints: 7-bit groups, least significant first, high bit set on
//! every byte but the last.

use crate::{Error, Result};

pub fn encode(mut v: u64, out: &mut Vec<u8>) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn encode_all(values: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 2);
    for &v in values {
        encode(v, &mut out);
    }
    out
}

/// Feeds bytes one at a time and yields a value when a varint completes.
#[derive(Debug, Default, Clone)]
pub struct Assembler {
    value: u64,
    shift: u32,
}

impl Assembler {
    pub fn push(&mut self, byte: u8) -> Result<Option<u64>> {
        let bits = (byte & 0x7F) as u64;
        if self.shift >= 64 || (self.shift == 63 && bits > 1) {
            return Err(Error::Decode("varint overflows 64 bits".into()));
        }
        self.value |= bits << self.shift;
        if byte & 0x80 == 0 {
            let v = self.value;
            *self = Assembler::default();
            Ok(Some(v))
        } else {
            self.shift += 7;
            Ok(None)
        }
    }

    pub fn is_idle(&self) -> bool {
        self.shift == 0 && self.value == 0
    }
}

pub fn decode_all(bytes: &[u8]) -> Result<Vec<u64>> {
    let mut asm = Assembler::default();
    let mut out = Vec::new();
    for &b in bytes {
        if let Some(v) = asm.push(b)? {
            out.push(v);
        }
    }
    if !asm.is_idle() || bytes.last().is_some_and(|b| b & 0x80 != 0) {
        return Err(Error::Decode("truncated varint".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(encode_all(&[0]), vec![0]);
        assert_eq!(encode_all(&[127]), vec![0x7F]);
        assert_eq!(encode_all(&[128]), vec![0x80, 0x01]);
        assert_eq!(encode_all(&[300]), vec![0xAC, 0x02]);
        assert_eq!(encode_all(&[u64::MAX]).len(), 10);
        assert!(decode_all(&[0x80]).is_err());
        assert!(decode_all(&[0xFF; 11]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(any::<u64>(), 0..50)) {
            prop_assert_eq!(decode_all(&encode_all(&values)).unwrap(), values);
        }
    }
}
