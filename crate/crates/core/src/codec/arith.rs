//! Adaptive order-0 range coder over bytes.
//!
//! Symbol `s` after `i` coded symbols has frequency `1 + inc·count_s` out of
//! `256 + inc·i` (add-one smoothing when `inc = 1`). The encoder tries every
//! increment in [`INCREMENTS`] and keeps the shortest stream; the chosen index
//! is coded first as a uniform 4-ary symbol. Arithmetic is 64-bit integer
//! throughout: the range is renormalised a byte at a time below 2^56 and
//! carries are propagated into the already-written bytes.

use crate::{Error, Result};

pub const INCREMENTS: [u64; 4] = [1, 16, 256, 65536];
const TOP: u64 = 1 << 56;
const MAX_TOTAL: u64 = 1 << 40;

#[derive(Clone)]
struct Model {
    inc: u64,
    counts: [u64; 256],
    seen: u64,
}

impl Model {
    fn new(inc: u64) -> Self {
        Model {
            inc,
            counts: [0; 256],
            seen: 0,
        }
    }

    fn total(&self) -> u64 {
        256 + self.inc * self.seen
    }

    fn freq(&self, s: usize) -> u64 {
        1 + self.inc * self.counts[s]
    }

    fn cum(&self, s: usize) -> u64 {
        s as u64 + self.inc * self.counts[..s].iter().sum::<u64>()
    }

    /// Symbol whose cumulative interval contains `target`.
    fn find(&self, target: u64) -> (usize, u64) {
        let mut cum = 0;
        for s in 0..255 {
            let f = self.freq(s);
            if target < cum + f {
                return (s, cum);
            }
            cum += f;
        }
        (255, cum)
    }

    fn update(&mut self, s: usize) {
        self.counts[s] += 1;
        self.seen += 1;
        if self.total() > MAX_TOTAL {
            for c in self.counts.iter_mut() {
                *c /= 2;
            }
            self.seen = self.counts.iter().sum();
        }
    }

    /// Ideal adaptive code length of `symbols` in bits.
    fn cost(mut self, symbols: &[u8]) -> f64 {
        let mut bits = 0.0;
        for &s in symbols {
            bits -= (self.freq(s as usize) as f64 / self.total() as f64).log2();
            self.update(s as usize);
        }
        bits
    }
}

struct Encoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Encoder {
            low: 0,
            range: u64::MAX,
            out: Vec::new(),
        }
    }

    fn carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            let (v, overflow) = b.overflowing_add(1);
            *b = v;
            if !overflow {
                return;
            }
        }
    }

    fn encode(&mut self, cum: u64, freq: u64, total: u64) {
        let r = self.range / total;
        let start = r * cum;
        let (low, overflow) = self.low.overflowing_add(start);
        self.low = low;
        if overflow {
            self.carry();
        }
        self.range = if cum + freq == total { self.range - start } else { r * freq };
        while self.range < TOP {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Emits the shortest byte string whose zero-extension lies in the final
    /// interval, then drops trailing zeros (the decoder reads zeros past the end).
    fn finish(mut self) -> Vec<u8> {
        let lo = self.low as u128;
        let hi = lo + self.range as u128;
        for m in 0..=8u32 {
            let unit = 1u128 << (64 - 8 * m);
            let v = lo.div_ceil(unit) * unit;
            if v < hi {
                let v = if v >= 1u128 << 64 {
                    self.carry();
                    v - (1u128 << 64)
                } else {
                    v
                } as u64;
                for j in 0..m {
                    self.out.push((v >> (56 - 8 * j)) as u8);
                }
                break;
            }
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

fn encode_with(model_index: usize, symbols: &[u8]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.encode(model_index as u64, 1, INCREMENTS.len() as u64);
    let mut model = Model::new(INCREMENTS[model_index]);
    for &s in symbols {
        let s = s as usize;
        enc.encode(model.cum(s), model.freq(s), model.total());
        model.update(s);
    }
    enc.finish()
}

/// Encodes `symbols`; the count is not stored and must be supplied to decode.
pub fn encode(symbols: &[u8]) -> Vec<u8> {
    (0..INCREMENTS.len())
        .map(|i| encode_with(i, symbols))
        .min_by_key(|s| s.len())
        .expect("non-empty model set")
}

/// Ideal code length of `symbols` under the add-one adaptive model, in bits.
pub fn laplace_cost_bits(symbols: &[u8]) -> f64 {
    Model::new(1).cost(symbols)
}

/// Smallest ideal code length over the model family, plus the 2-bit model index.
pub fn best_model_cost_bits(symbols: &[u8]) -> f64 {
    INCREMENTS
        .iter()
        .map(|&inc| Model::new(inc).cost(symbols))
        .fold(f64::INFINITY, f64::min)
        + 2.0
}

/// Incremental decoder; call [`Decoder::finish`] to check the stream was
/// consumed consistently.
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    diff: u64,
    range: u64,
    model: Model,
    model_index: usize,
    decoded: Vec<u8>,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Decoder {
            bytes,
            pos: 0,
            diff: 0,
            range: u64::MAX,
            model: Model::new(1),
            model_index: 0,
            decoded: Vec::new(),
        };
        for _ in 0..8 {
            d.diff = (d.diff << 8) | d.next_byte() as u64;
        }
        let n = INCREMENTS.len() as u64;
        let r = d.range / n;
        let idx = (d.diff / r).min(n - 1);
        d.narrow(idx, 1, n, r);
        d.model_index = idx as usize;
        d.model = Model::new(INCREMENTS[idx as usize]);
        Ok(d)
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn narrow(&mut self, cum: u64, freq: u64, total: u64, r: u64) {
        let start = r * cum;
        self.diff -= start;
        self.range = if cum + freq == total { self.range - start } else { r * freq };
        while self.range < TOP {
            self.diff = (self.diff << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
    }

    pub fn decode(&mut self) -> Result<u8> {
        let total = self.model.total();
        let r = self.range / total;
        let target = (self.diff / r).min(total - 1);
        let (s, cum) = self.model.find(target);
        let freq = self.model.freq(s);
        if self.diff < r * cum {
            return Err(Error::Decode("corrupted arithmetic stream".into()));
        }
        self.narrow(cum, freq, total, r);
        self.model.update(s);
        self.decoded.push(s as u8);
        Ok(s as u8)
    }

    /// Verifies that re-encoding the decoded symbols reproduces the input
    /// stream exactly; this catches corrupted streams and wrong counts.
    pub fn finish(self) -> Result<Vec<u8>> {
        if encode(&self.decoded) != self.bytes {
            return Err(Error::Decode(
                "arithmetic stream does not match the decoded symbol count".into(),
            ));
        }
        Ok(self.decoded)
    }
}

pub fn decode(bytes: &[u8], count: usize) -> Result<Vec<u8>> {
    let mut d = Decoder::new(bytes)?;
    for _ in 0..count {
        d.decode()?;
    }
    d.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_stream_is_short() {
        let e = encode(&[]);
        assert!(e.len() * 8 <= 16);
        assert_eq!(decode(&e, 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn constant_stream() {
        let data = vec![42u8; 10_000];
        let e = encode(&data);
        assert!(e.len() * 8 <= 200, "{} bits", e.len() * 8);
        assert_eq!(decode(&e, data.len()).unwrap(), data);
    }

    #[test]
    fn within_sixteen_bits_of_laplace_cost() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for len in [1usize, 10, 100, 1000, 10_000] {
            let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let e = encode(&data);
            assert!((e.len() * 8) as f64 <= laplace_cost_bits(&data) + 16.0);
            assert_eq!(decode(&e, len).unwrap(), data);
        }
    }

    /// A successful decode is always the unique symbol sequence whose
    /// canonical encoding is the input, so corruption can never yield the
    /// original data. A stream can also be a canonical encoding of a longer
    /// sequence, which is why the count travels out of band.
    #[test]
    fn decoded_output_is_always_canonical() {
        let data: Vec<u8> = (0..500u32).map(|i| (i * 7 % 13) as u8).collect();
        let e = encode(&data);
        let mut rejected = 0;
        for pos in 0..e.len() {
            for bit in 0..8 {
                let mut bad = e.clone();
                bad[pos] ^= 1 << bit;
                match decode(&bad, data.len()) {
                    Ok(d) => {
                        assert_ne!(d, data);
                        assert_eq!(encode(&d), bad);
                    }
                    Err(_) => rejected += 1,
                }
            }
        }
        assert!(rejected > 0);
        for count in [0, data.len() - 1, data.len() + 1, data.len() + 7] {
            if let Ok(d) = decode(&e, count) {
                assert_eq!(encode(&d), e);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(any::<u8>(), 0..2000)) {
            let e = encode(&data);
            prop_assert_eq!(decode(&e, data.len()).unwrap(), data);
        }

        #[test]
        fn round_trip_skewed(data in proptest::collection::vec(prop_oneof![9 => Just(0u8), 1 => any::<u8>()], 0..3000)) {
            let e = encode(&data);
            prop_assert!((e.len() * 8) as f64 <= best_model_cost_bits(&data) + 16.0);
            prop_assert_eq!(decode(&e, data.len()).unwrap(), data);
        }
    }
}
