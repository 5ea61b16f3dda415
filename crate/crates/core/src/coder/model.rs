use crate::entropy::{logistic_tail, memory_tail, prob_logistic, prob_memory};
use crate::error::{MtrError, Result};

pub const CDF_PRECISION_BITS: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_PRECISION_BITS;
/// Symbols of memory and hyper streams live in `[-ALPHABET_BOUND, ALPHABET_BOUND]`;
/// anything else takes the escape path.
pub const ALPHABET_BOUND: i32 = 64;

/// Static cumulative frequency table with 16-bit precision.
///
/// Regular symbols cover `min..=max`; when `overflow` is set one extra
/// escape entry follows them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    min: i32,
    max: i32,
    overflow: bool,
    cum: Vec<u32>,
}

impl CdfTable {
    /// Quantize `masses` (regular symbols first, then the escape entry if
    /// `overflow`) to integer counts summing to 2^16.
    ///
    /// Every entry first receives one count; the remaining counts are shared
    /// in proportion to the masses with largest-remainder rounding, ties going
    /// to the lower index.
    pub fn from_masses(min: i32, masses: &[f64], overflow: bool) -> Result<Self> {
        let n = masses.len();
        let regular = n - overflow as usize;
        if regular == 0 || n > CDF_TOTAL as usize {
            return Err(MtrError::contract(format!("cdf table needs 1..=65536 entries, got {n}")));
        }
        let clean: Vec<f64> = masses.iter().map(|&p| if p.is_finite() && p > 0.0 { p } else { 0.0 }).collect();
        let sum: f64 = clean.iter().sum();
        let weights: Vec<f64> = if sum > 0.0 { clean.iter().map(|p| p / sum).collect() } else { vec![1.0 / n as f64; n] };
        let spare = (CDF_TOTAL as usize - n) as f64;
        let mut counts = vec![1u32; n];
        let mut rem = Vec::with_capacity(n);
        let mut used = 0u64;
        for (i, w) in weights.iter().enumerate() {
            let share = spare * w;
            let whole = share.floor();
            counts[i] += whole as u32;
            used += whole as u64;
            rem.push((share - whole, i));
        }
        let mut left = (CDF_TOTAL as u64 - n as u64).saturating_sub(used) as usize;
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, i) in rem.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        Self::from_counts(min, &counts, overflow)
    }

    /// Table from explicit counts that already sum to 2^16.
    pub fn from_counts(min: i32, counts: &[u32], overflow: bool) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(MtrError::contract("cdf table counts must be positive"));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        cum.push(0u32);
        for &c in counts {
            cum.push(cum.last().unwrap() + c);
        }
        if *cum.last().unwrap() != CDF_TOTAL {
            return Err(MtrError::contract(format!("cdf counts sum to {}, not {CDF_TOTAL}", cum.last().unwrap())));
        }
        let max = min + (counts.len() - overflow as usize) as i32 - 1;
        Ok(CdfTable { min, max, overflow, cum })
    }

    pub fn counts(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    /// Count held by `value`, or by the escape entry for out-of-range values.
    pub fn count_of(&self, value: i32) -> Option<u32> {
        let i = self.index_of(value)?;
        Some(self.cum[i + 1] - self.cum[i])
    }

    pub(crate) fn bounds(&self) -> (i32, i32, bool) {
        (self.min, self.max, self.overflow)
    }

    pub(crate) fn index_of(&self, value: i32) -> Option<usize> {
        if (self.min..=self.max).contains(&value) {
            Some((value - self.min) as usize)
        } else if self.overflow {
            Some((self.max - self.min + 1) as usize)
        } else {
            None
        }
    }

    pub(crate) fn interval(&self, index: usize) -> (u32, u32) {
        (self.cum[index], self.cum[index + 1] - self.cum[index])
    }

    pub(crate) fn find(&self, target: u32) -> usize {
        // Largest index whose cumulative start is <= target.
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Table for one memory element with scale `sigma` over `[-bound, bound]`
/// plus an escape entry carrying the tail mass.
pub fn build_memory_cdf(sigma: f64, bound: i32) -> Result<CdfTable> {
    if bound < 1 {
        return Err(MtrError::contract(format!("alphabet bound must be >= 1, got {bound}")));
    }
    let mut masses: Vec<f64> = (-bound..=bound).map(|k| prob_memory(k as f64, sigma)).collect();
    masses.push(memory_tail(bound, sigma));
    CdfTable::from_masses(-bound, &masses, true)
}

/// Table for one hyper channel with logistic `loc`/`scale`.
pub fn build_logistic_cdf(loc: f64, scale: f64, bound: i32) -> Result<CdfTable> {
    if bound < 1 {
        return Err(MtrError::contract(format!("alphabet bound must be >= 1, got {bound}")));
    }
    let mut masses: Vec<f64> = (-bound..=bound).map(|k| prob_logistic(k as f64, loc, scale)).collect();
    masses.push(logistic_tail(bound, loc, scale));
    CdfTable::from_masses(-bound, &masses, true)
}

/// Adaptive frequency model: counts start at 1, grow by a fixed increment per
/// coded symbol and are halved (keeping every count at least 1) whenever the
/// total would exceed the cap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveModel {
    min: i32,
    max: i32,
    overflow: bool,
    counts: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub const TOTAL_CAP: u32 = 1 << 14;
    pub const INCREMENT: u32 = 32;

    pub fn new(min: i32, max: i32, overflow: bool) -> Self {
        assert!(min <= max, "empty adaptive alphabet");
        let n = (max - min + 1) as usize + overflow as usize;
        assert!((n as u32) * 2 <= Self::TOTAL_CAP, "adaptive alphabet too large");
        AdaptiveModel { min, max, overflow, counts: vec![1; n], total: n as u32 }
    }

    /// Symmetric residual alphabet `[-bound, bound]` plus escape.
    pub fn residual(bound: i32) -> Self {
        Self::new(-bound, bound, true)
    }

    /// Two-symbol model for flags.
    pub fn binary() -> Self {
        Self::new(0, 1, false)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub(crate) fn bounds(&self) -> (i32, i32, bool) {
        (self.min, self.max, self.overflow)
    }

    pub(crate) fn index_of(&self, value: i32) -> Option<usize> {
        if (self.min..=self.max).contains(&value) {
            Some((value - self.min) as usize)
        } else if self.overflow {
            Some((self.max - self.min + 1) as usize)
        } else {
            None
        }
    }

    pub(crate) fn interval(&self, index: usize) -> (u32, u32) {
        let start = self.counts[..index].iter().sum();
        (start, self.counts[index])
    }

    pub(crate) fn find(&self, target: u32) -> (usize, u32) {
        let mut start = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if target < start + c {
                return (i, start);
            }
            start += c;
        }
        unreachable!("target below total")
    }

    pub fn update(&mut self, index: usize) {
        self.counts[index] += Self::INCREMENT;
        self.total += Self::INCREMENT;
        if self.total > Self::TOTAL_CAP {
            self.total = 0;
            for c in &mut self.counts {
                *c = (*c + 1) / 2;
                self.total += *c;
            }
        }
    }
}
