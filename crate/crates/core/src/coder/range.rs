use crate::error::{MtrError, Result};

const TOP: u32 = 1 << 24;

/// Carry-propagating range encoder (LZMA-style low/cache scheme).
#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    /// Narrow the interval to `[start, start + size)` out of `total`.
    ///
    /// `total` must not exceed 2^16 and `size` must be non-zero.
    pub fn encode(&mut self, start: u32, size: u32, total: u32) {
        debug_assert!(size > 0 && start + size <= total && total <= 1 << 16);
        let r = self.range / total;
        self.low += start as u64 * r as u64;
        self.range = size * r;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Uniformly coded raw value of `bits` bits (at most 16).
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 16 && value < 1 << bits);
        self.encode(value, 1, 1 << bits);
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

/// Decoder matching [`RangeEncoder`].
#[derive(Debug)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 5 {
            return Err(MtrError::decode(format!("range stream too short ({} bytes)", input.len())));
        }
        if input[0] != 0 {
            return Err(MtrError::decode("range stream does not start with a zero byte"));
        }
        let mut d = RangeDecoder { input, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self
            .input
            .get(self.pos)
            .copied()
            .ok_or_else(|| MtrError::decode("range stream ended early"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Target count in `[0, total)` for the next symbol.
    pub fn peek(&mut self, total: u32) -> Result<u32> {
        let r = self.range / total;
        let v = self.code / r;
        if v >= total {
            return Err(MtrError::decode("range stream is corrupt (target out of range)"));
        }
        Ok(v)
    }

    /// Consume the symbol occupying `[start, start + size)`.
    pub fn consume(&mut self, start: u32, size: u32, total: u32) -> Result<()> {
        let r = self.range / total;
        self.code -= start * r;
        self.range = size * r;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let total = 1 << bits;
        let v = self.peek(total)?;
        self.consume(v, 1, total)?;
        Ok(v)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn empty_stream_is_five_bytes() {
        let bytes = RangeEncoder::new().finish();
        assert_eq!(bytes.len(), 5);
        assert!(RangeDecoder::new(&bytes).is_ok());
    }

    #[test]
    fn raw_bits_round_trip_and_exact_length() {
        let mut rng = Rng::new(1);
        let vals: Vec<u32> = (0..1000).map(|_| rng.below(1 << 13) as u32).collect();
        let mut e = RangeEncoder::new();
        for &v in &vals {
            e.encode_bits(v, 13);
        }
        let bytes = e.finish();
        // 13000 bits of payload plus the flush.
        assert!(bytes.len() <= 13000 / 8 + 6, "{}", bytes.len());
        let mut d = RangeDecoder::new(&bytes).unwrap();
        for &v in &vals {
            assert_eq!(d.decode_bits(13).unwrap(), v);
        }
        assert!(d.position() <= bytes.len());
    }

    #[test]
    fn carries_propagate() {
        // Highly skewed intervals near the top force long 0xFF runs.
        let mut e = RangeEncoder::new();
        for i in 0..5000u32 {
            if i % 97 == 0 {
                e.encode(0, 1, 1 << 16);
            } else {
                e.encode(1, (1 << 16) - 1, 1 << 16);
            }
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes).unwrap();
        for i in 0..5000u32 {
            let v = d.peek(1 << 16).unwrap();
            if i % 97 == 0 {
                assert_eq!(v, 0);
                d.consume(0, 1, 1 << 16).unwrap();
            } else {
                assert!(v >= 1);
                d.consume(1, (1 << 16) - 1, 1 << 16).unwrap();
            }
        }
    }

    #[test]
    fn truncated_input_errors() {
        assert!(RangeDecoder::new(&[0, 1, 2]).is_err());
        let mut e = RangeEncoder::new();
        for v in 0..200u32 {
            e.encode_bits(v % 256, 8);
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes[..20]).unwrap();
        let r: Result<Vec<u32>> = (0..200).map(|_| d.decode_bits(8)).collect();
        assert!(r.is_err());
    }
}
