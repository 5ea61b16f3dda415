use super::model::{AdaptiveModel, CdfTable, CDF_TOTAL};
use super::range::{RangeDecoder, RangeEncoder};
use crate::error::{MtrError, Result};

/// Escaped values carry their magnitude in this many raw bits, then a sign bit.
pub const ESCAPE_MAGNITUDE_BITS: u32 = 16;

/// Range encoder that knows how to code integers under static or adaptive
/// models, including the escape path for out-of-alphabet values.
#[derive(Debug, Default)]
pub struct SymbolEncoder {
    rc: RangeEncoder,
}

impl SymbolEncoder {
    pub fn new() -> Self {
        SymbolEncoder { rc: RangeEncoder::new() }
    }

    fn escape(&mut self, value: i32) -> Result<()> {
        let mag = value.unsigned_abs();
        if mag >= 1 << ESCAPE_MAGNITUDE_BITS {
            return Err(MtrError::contract(format!("value {value} exceeds the 16-bit escape range")));
        }
        self.rc.encode_bits(mag, ESCAPE_MAGNITUDE_BITS);
        self.rc.encode_bits((value < 0) as u32, 1);
        Ok(())
    }

    pub fn encode_static(&mut self, value: i32, table: &CdfTable) -> Result<()> {
        let (min, max, _) = table.bounds();
        let idx = table
            .index_of(value)
            .ok_or_else(|| MtrError::contract(format!("symbol {value} outside alphabet [{min}, {max}]")))?;
        let escaped = value < min || value > max;
        // Check the magnitude before committing the escape symbol.
        if escaped && value.unsigned_abs() >= 1 << ESCAPE_MAGNITUDE_BITS {
            return Err(MtrError::contract(format!("value {value} exceeds the 16-bit escape range")));
        }
        let (start, size) = table.interval(idx);
        self.rc.encode(start, size, CDF_TOTAL);
        if escaped {
            self.escape(value)?;
        }
        Ok(())
    }

    pub fn encode_adaptive(&mut self, value: i32, model: &mut AdaptiveModel) -> Result<()> {
        let (min, max, _) = model.bounds();
        let idx = model
            .index_of(value)
            .ok_or_else(|| MtrError::contract(format!("symbol {value} outside alphabet [{min}, {max}]")))?;
        let escaped = value < min || value > max;
        if escaped && value.unsigned_abs() >= 1 << ESCAPE_MAGNITUDE_BITS {
            return Err(MtrError::contract(format!("value {value} exceeds the 16-bit escape range")));
        }
        let (start, size) = model.interval(idx);
        self.rc.encode(start, size, model.total());
        model.update(idx);
        if escaped {
            self.escape(value)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.rc.finish()
    }
}

/// Decoder matching [`SymbolEncoder`].
#[derive(Debug)]
pub struct SymbolDecoder<'a> {
    rc: RangeDecoder<'a>,
}

impl<'a> SymbolDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        Ok(SymbolDecoder { rc: RangeDecoder::new(bytes)? })
    }

    fn unescape(&mut self) -> Result<i32> {
        let mag = self.rc.decode_bits(ESCAPE_MAGNITUDE_BITS)? as i32;
        let neg = self.rc.decode_bits(1)? == 1;
        Ok(if neg { -mag } else { mag })
    }

    pub fn decode_static(&mut self, table: &CdfTable) -> Result<i32> {
        let (min, max, overflow) = table.bounds();
        let target = self.rc.peek(CDF_TOTAL)?;
        let idx = table.find(target);
        let (start, size) = table.interval(idx);
        self.rc.consume(start, size, CDF_TOTAL)?;
        if overflow && idx == (max - min + 1) as usize {
            let v = self.unescape()?;
            if (min..=max).contains(&v) {
                return Err(MtrError::decode(format!("escaped value {v} lies inside the alphabet")));
            }
            Ok(v)
        } else {
            Ok(min + idx as i32)
        }
    }

    pub fn decode_adaptive(&mut self, model: &mut AdaptiveModel) -> Result<i32> {
        let (min, max, overflow) = model.bounds();
        let target = self.rc.peek(model.total())?;
        let (idx, start) = model.find(target);
        let size = model.counts()[idx];
        self.rc.consume(start, size, model.total())?;
        model.update(idx);
        if overflow && idx == (max - min + 1) as usize {
            let v = self.unescape()?;
            if (min..=max).contains(&v) {
                return Err(MtrError::decode(format!("escaped value {v} lies inside the alphabet")));
            }
            Ok(v)
        } else {
            Ok(min + idx as i32)
        }
    }
}

/// Model source for a whole symbol sequence.
#[derive(Clone, Debug)]
pub enum SymbolTables<'a> {
    /// One table per symbol, or a single table shared by all symbols.
    Static(&'a [CdfTable]),
    /// A fresh adaptive model, updated after every symbol.
    Adaptive(AdaptiveModel),
}

fn table_for<'t>(tables: &'t [CdfTable], i: usize, n: usize) -> Result<&'t CdfTable> {
    match tables.len() {
        1 => Ok(&tables[0]),
        len if len == n => Ok(&tables[i]),
        len => Err(MtrError::contract(format!("{len} tables supplied for {n} symbols"))),
    }
}

pub fn encode_symbols(symbols: &[i32], tables: SymbolTables<'_>) -> Result<Vec<u8>> {
    let mut enc = SymbolEncoder::new();
    match tables {
        SymbolTables::Static(t) => {
            for (i, &s) in symbols.iter().enumerate() {
                enc.encode_static(s, table_for(t, i, symbols.len())?)?;
            }
        }
        SymbolTables::Adaptive(mut m) => {
            for &s in symbols {
                enc.encode_adaptive(s, &mut m)?;
            }
        }
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], tables: SymbolTables<'_>, count: usize) -> Result<Vec<i32>> {
    let mut dec = SymbolDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    match tables {
        SymbolTables::Static(t) => {
            for i in 0..count {
                out.push(dec.decode_static(table_for(t, i, count)?)?);
            }
        }
        SymbolTables::Adaptive(mut m) => {
            for _ in 0..count {
                out.push(dec.decode_adaptive(&mut m)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coder::{build_memory_cdf, ALPHABET_BOUND};
    use crate::numerics::Rng;

    #[test]
    fn empty_sequence() {
        let t = [build_memory_cdf(1.0, 4).unwrap()];
        let bytes = encode_symbols(&[], SymbolTables::Static(&t)).unwrap();
        assert!(bytes.len() <= 8);
        assert!(decode_symbols(&bytes, SymbolTables::Static(&t), 0).unwrap().is_empty());
    }

    #[test]
    fn fair_coin_costs_one_bit() {
        let t = [CdfTable::from_masses(0, &[0.5, 0.5], false).unwrap()];
        let mut rng = Rng::new(3);
        let s: Vec<i32> = (0..1000).map(|_| rng.below(2) as i32).collect();
        let bytes = encode_symbols(&s, SymbolTables::Static(&t)).unwrap();
        assert!((bytes.len() as i64 - 125).abs() <= 8, "{}", bytes.len());
        assert_eq!(decode_symbols(&bytes, SymbolTables::Static(&t), s.len()).unwrap(), s);
    }

    #[test]
    fn escapes_round_trip() {
        let t = [build_memory_cdf(3.0, ALPHABET_BOUND).unwrap()];
        let s = vec![0, 65, -65, 1000, -65535, 65535, 64, -64, 3];
        let bytes = encode_symbols(&s, SymbolTables::Static(&t)).unwrap();
        assert_eq!(decode_symbols(&bytes, SymbolTables::Static(&t), s.len()).unwrap(), s);
        let bytes = encode_symbols(&s, SymbolTables::Adaptive(AdaptiveModel::residual(31))).unwrap();
        assert_eq!(decode_symbols(&bytes, SymbolTables::Adaptive(AdaptiveModel::residual(31)), s.len()).unwrap(), s);
    }

    #[test]
    fn out_of_alphabet_without_escape_is_contract_error() {
        let t = [CdfTable::from_masses(0, &[0.5, 0.5], false).unwrap()];
        assert!(matches!(encode_symbols(&[2], SymbolTables::Static(&t)), Err(MtrError::Contract(_))));
        let big = [build_memory_cdf(1.0, 4).unwrap()];
        assert!(matches!(encode_symbols(&[70_000], SymbolTables::Static(&big)), Err(MtrError::Contract(_))));
    }

    #[test]
    fn garbage_never_panics() {
        let t = [build_memory_cdf(0.7, ALPHABET_BOUND).unwrap()];
        let mut rng = Rng::new(99);
        for _ in 0..200 {
            let n = 5 + rng.below(40) as usize;
            let mut bytes: Vec<u8> = (0..n).map(|_| rng.below(256) as u8).collect();
            bytes[0] = 0;
            let _ = decode_symbols(&bytes, SymbolTables::Static(&t), 100);
            let _ = decode_symbols(&bytes, SymbolTables::Adaptive(AdaptiveModel::residual(31)), 100);
        }
    }
}
