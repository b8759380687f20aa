//! Quantization codebooks: NormalFloat quantile tables and a uniform
//! comparator grid.
//!
//! A NormalFloat codebook with `k` bits holds 2^k codepoints in [-1, 1]:
//! quantiles of the standard normal evaluated on an asymmetric probability
//! grid (one extra point on the positive side), merged at an exact zero and
//! normalized by the largest magnitude so both ends land exactly on ±1.
//! The probability grid runs out to the offset
//! `delta = 1 - (1/(4*2^k) + 1/(4*(2^k - 1)))`.

use crate::normal::normal_quantile;
use crate::{Error, Result, Scalar};

/// Sorted codepoint table for block-wise absmax quantization.
///
/// Built by [`Codebook::normal_float`] (which guarantees strictly increasing
/// codepoints, exact -1/0/+1 entries) or [`Codebook::uniform`] (evenly spaced
/// levels, no exact zero for even table sizes).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T> {
    bits: u8,
    id: String,
    codepoints: Vec<T>,
    zero_index: usize,
}

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

impl<T: Scalar> Codebook<T> {
    /// NormalFloat codebook with 2^bits quantile codepoints.
    pub fn normal_float(bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let half = 1usize << (bits - 1);
        let delta = nf_offset(bits);

        let mut points = Vec::with_capacity(1 << bits);
        // Negative side: `half` probabilities from delta down to 1/2; the
        // shared 1/2 point becomes the exact zero below.
        for i in 0..half - 1 {
            let p = linspace(delta, 0.5, half, i);
            points.push(-normal_quantile(p)?);
        }
        points.push(0.0);
        // Positive side: `half + 1` probabilities from 1/2 up to delta,
        // skipping the shared 1/2 point.
        for i in 1..=half {
            let p = linspace(0.5, delta, half + 1, i);
            points.push(normal_quantile(p)?);
        }

        // Both ends evaluate the quantile at exactly delta, so dividing by
        // the last point lands the extremes exactly on -1 and +1.
        let max_mag = points[points.len() - 1];
        let codepoints: Vec<T> = points.iter().map(|&v| T::from_f64(v / max_mag)).collect();

        let cb = Codebook { bits, id: format!("nf{bits}"), codepoints, zero_index: half - 1 };
        debug_assert!(cb.check_invariants());
        Ok(cb)
    }

    /// Uniform symmetric grid with 2^bits evenly spaced levels in [-1, 1],
    /// the int-grid comparator for the error benchmarks.
    pub fn uniform(bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let n = 1usize << bits;
        let codepoints: Vec<T> =
            (0..n).map(|i| T::from_f64(linspace(-1.0, 1.0, n, i))).collect();
        // Even tables have no exact zero; scale-0 blocks store the index
        // nearest zero, which still dequantizes to zero.
        let zero_index = nearest_index(&codepoints, T::zero());
        Ok(Codebook { bits, id: format!("uniform{bits}"), codepoints, zero_index })
    }

    /// Rebuild a codebook from the identifier stored in tensor headers.
    pub fn from_id(id: &str) -> Result<Self> {
        let parse = |rest: &str| {
            rest.parse::<u8>()
                .map_err(|_| Error::Config(format!("unknown codebook id {id:?}")))
        };
        if let Some(rest) = id.strip_prefix("nf") {
            Self::normal_float(parse(rest)?)
        } else if let Some(rest) = id.strip_prefix("uniform") {
            Self::uniform(parse(rest)?)
        } else {
            Err(Error::Config(format!("unknown codebook id {id:?}")))
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.codepoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn codepoints(&self) -> &[T] {
        &self.codepoints
    }

    /// Index whose codepoint is nearest zero (the exact zero for NF tables);
    /// used for zero-scale blocks and nibble padding.
    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    /// Largest gap between adjacent codepoints; `scale * max_gap / 2` bounds
    /// the absolute round-trip error of any in-range value.
    pub fn max_gap(&self) -> T {
        let mut gap = T::zero();
        for w in self.codepoints.windows(2) {
            gap = gap.max(w[1] - w[0]);
        }
        gap
    }

    /// Index of the codepoint nearest `x`, ties broken toward the lower index.
    pub fn nearest_index(&self, x: T) -> usize {
        nearest_index(&self.codepoints, x)
    }

    fn check_invariants(&self) -> bool {
        let n = self.codepoints.len();
        n == 1usize << self.bits
            && self.codepoints.windows(2).all(|w| w[0] < w[1])
            && self.codepoints[0] == -T::one()
            && self.codepoints[n - 1] == T::one()
            && self.codepoints.iter().filter(|&&c| c == T::zero()).count() == 1
    }
}

/// The probability offset bounding the NF quantile grid.
pub fn nf_offset(bits: u8) -> f64 {
    let n = (1usize << bits) as f64;
    1.0 - 0.5 * (1.0 / (2.0 * n) + 1.0 / (2.0 * (n - 1.0)))
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Domain(format!(
            "codebook bits must lie in {MIN_BITS}..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// i-th of `n` evenly spaced values from `a` to `b`, endpoints pinned exactly.
fn linspace(a: f64, b: f64, n: usize, i: usize) -> f64 {
    debug_assert!(n >= 2 && i < n);
    if i == 0 {
        a
    } else if i == n - 1 {
        b
    } else {
        a + (b - a) * i as f64 / (n - 1) as f64
    }
}

pub(crate) fn nearest_index<T: Scalar>(codepoints: &[T], x: T) -> usize {
    let mut best = 0;
    let mut best_dist = (x - codepoints[0]).abs();
    for (i, &c) in codepoints.iter().enumerate().skip(1) {
        let d = (x - c).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::oracle::quantile_oracle;

    #[test]
    fn nf4_structure() {
        let cb = Codebook::<f64>::normal_float(4).unwrap();
        assert_eq!(cb.len(), 16);
        assert_eq!(cb.codepoints()[0], -1.0);
        assert_eq!(cb.codepoints()[15], 1.0);
        assert_eq!(cb.codepoints()[7], 0.0);
        assert_eq!(cb.zero_index(), 7);
        assert!(cb.codepoints().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(cb.id(), "nf4");
    }

    #[test]
    fn nf4_matches_independent_quantile_oracle() {
        // Re-run the construction with the bisection quantile oracle and
        // compare value by value.
        let cb = Codebook::<f64>::normal_float(4).unwrap();
        let expected = oracle_nf_table(4);
        for (got, want) in cb.codepoints().iter().zip(&expected) {
            assert!((got - want).abs() <= 1e-6, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn nf_tables_all_supported_widths() {
        for bits in MIN_BITS..=MAX_BITS {
            let cb = Codebook::<f64>::normal_float(bits).unwrap();
            assert_eq!(cb.len(), 1 << bits);
            assert!(cb.check_invariants(), "invariants broken for bits={bits}");
            let expected = oracle_nf_table(bits);
            for (got, want) in cb.codepoints().iter().zip(&expected) {
                assert!((got - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn nf2_contains_minus_one_zero_one() {
        let cb = Codebook::<f64>::normal_float(2).unwrap();
        assert_eq!(cb.len(), 4);
        assert!(cb.codepoints().contains(&-1.0));
        assert!(cb.codepoints().contains(&0.0));
        assert!(cb.codepoints().contains(&1.0));
        assert!(cb.codepoints().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bits_out_of_range_rejected() {
        assert!(matches!(Codebook::<f64>::normal_float(1), Err(Error::Domain(_))));
        assert!(matches!(Codebook::<f64>::normal_float(9), Err(Error::Domain(_))));
        assert!(matches!(Codebook::<f64>::uniform(0), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_grid_is_symmetric_and_even() {
        let cb = Codebook::<f64>::uniform(4).unwrap();
        let c = cb.codepoints();
        assert_eq!(c[0], -1.0);
        assert_eq!(c[15], 1.0);
        for i in 0..16 {
            assert!((c[i] + c[15 - i]).abs() < 1e-15);
        }
        let step = c[1] - c[0];
        for w in c.windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-15);
        }
        // nearest-to-zero index, ties broken low
        assert_eq!(cb.zero_index(), 7);
    }

    #[test]
    fn from_id_roundtrip() {
        let nf = Codebook::<f32>::normal_float(4).unwrap();
        assert_eq!(Codebook::<f32>::from_id("nf4").unwrap(), nf);
        let uni = Codebook::<f32>::uniform(3).unwrap();
        assert_eq!(Codebook::<f32>::from_id("uniform3").unwrap(), uni);
        assert!(matches!(Codebook::<f32>::from_id("int8"), Err(Error::Config(_))));
        assert!(matches!(Codebook::<f32>::from_id("nfx"), Err(Error::Config(_))));
    }

    #[test]
    fn nearest_index_ties_go_low() {
        let cb = Codebook::<f64>::uniform(2).unwrap();
        // codepoints: -1, -1/3, 1/3, 1 ; midpoint of the middle pair is 0
        assert_eq!(cb.nearest_index(0.0), 1);
        assert_eq!(cb.nearest_index(0.34), 2);
        assert_eq!(cb.nearest_index(-2.0), 0);
        assert_eq!(cb.nearest_index(2.0), 3);
    }

    /// Evaluate the spec construction with the bisection quantile oracle.
    fn oracle_nf_table(bits: u8) -> Vec<f64> {
        let half = 1usize << (bits - 1);
        let delta = nf_offset(bits);
        let mut z = Vec::new();
        for i in 0..half - 1 {
            z.push(-quantile_oracle(linspace(delta, 0.5, half, i)));
        }
        z.push(0.0);
        for i in 1..=half {
            z.push(quantile_oracle(linspace(0.5, delta, half + 1, i)));
        }
        let m = z[z.len() - 1];
        z.iter().map(|v| v / m).collect()
    }
}
