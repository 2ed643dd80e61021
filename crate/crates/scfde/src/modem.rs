//! QPSK mapping, hard decisions, and bit recovery.
//!
//! The bit pair `(b0, b1)` maps to `sqrt(power / 2) * ((1 - 2*b0) + j(1 - 2*b1))`:
//! the first bit selects the sign of the real part, the second the sign of the
//! imaginary part. Adjacent constellation points differ in exactly one bit
//! (Gray labeling), and every point has magnitude `sqrt(power)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::TimeBlock;

/// A plain bit sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBlock {
    bits: Vec<bool>,
}

impl BitBlock {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Uniform random bits, two per eventual symbol.
    pub fn random<R: rand::Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Hamming distance to another block of the same length.
    pub fn count_differences(&self, other: &BitBlock) -> u64 {
        assert_eq!(self.len(), other.len(), "bit blocks must have equal length");
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count() as u64
    }
}

/// A block of constellation symbols together with the per-symbol power they
/// were drawn at.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    symbols: TimeBlock,
    symbol_power: f64,
}

impl SymbolBlock {
    /// Wraps a block that is claimed to consist of constellation points at
    /// `power`; every sample is checked against the four valid points.
    pub fn new(symbols: TimeBlock, power: f64) -> Result<Self> {
        assert!(
            power > 0.0 && power.is_finite(),
            "symbol power must be positive and finite"
        );
        let a = (power / 2.0).sqrt();
        for &s in symbols.samples() {
            if !on_constellation(s, a) {
                return Err(Error::InvalidSymbol(s));
            }
        }
        Ok(Self {
            symbols,
            symbol_power: power,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &TimeBlock {
        &self.symbols
    }

    pub fn power(&self) -> f64 {
        self.symbol_power
    }
}

fn on_constellation(s: Complex64, amplitude: f64) -> bool {
    let tol = 1e-9 * amplitude;
    (s.re.abs() - amplitude).abs() <= tol && (s.im.abs() - amplitude).abs() <= tol
}

/// Maps pairs of bits to symbols at the given per-symbol power.
///
/// The bit count must be even; symbol `m` is built from bits `2m` and `2m + 1`.
pub fn modulate(bits: &BitBlock, power: f64) -> Result<SymbolBlock> {
    assert!(
        power > 0.0 && power.is_finite(),
        "symbol power must be positive and finite"
    );
    if !bits.len().is_multiple_of(2) {
        return Err(Error::InvalidLength(format!(
            "need an even number of bits, got {}",
            bits.len()
        )));
    }
    let a = (power / 2.0).sqrt();
    let symbols = bits
        .bits()
        .chunks_exact(2)
        .map(|pair| {
            let re = if pair[0] { -a } else { a };
            let im = if pair[1] { -a } else { a };
            Complex64::new(re, im)
        })
        .collect();
    Ok(SymbolBlock {
        symbols: TimeBlock::new(symbols),
        symbol_power: power,
    })
}

/// Nearest constellation point for a single soft sample. Components on the
/// decision boundary go to the positive side.
pub fn decide_sample(sample: Complex64, power: f64) -> Complex64 {
    let a = (power / 2.0).sqrt();
    Complex64::new(
        if sample.re < 0.0 { -a } else { a },
        if sample.im < 0.0 { -a } else { a },
    )
}

/// Per-sample nearest-point decisions over a whole block.
pub fn hard_decide(block: &TimeBlock, power: f64) -> SymbolBlock {
    assert!(
        power > 0.0 && power.is_finite(),
        "symbol power must be positive and finite"
    );
    let symbols = block
        .samples()
        .iter()
        .map(|&s| decide_sample(s, power))
        .collect();
    SymbolBlock {
        symbols: TimeBlock::new(symbols),
        symbol_power: power,
    }
}

/// Recovers the bit pairs behind a block of constellation symbols. This is
/// the exact inverse of [`modulate`]; it refuses samples that are not on the
/// constellation rather than quietly slicing them.
pub fn demodulate(block: &SymbolBlock) -> Result<BitBlock> {
    let a = (block.power() / 2.0).sqrt();
    let mut bits = Vec::with_capacity(2 * block.len());
    for &s in block.symbols().samples() {
        if !on_constellation(s, a) {
            return Err(Error::InvalidSymbol(s));
        }
        bits.push(s.re < 0.0);
        bits.push(s.im < 0.0);
    }
    Ok(BitBlock::new(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mapping_follows_sign_convention() {
        let bits = BitBlock::new(vec![false, false, true, false, false, true, true, true]);
        let out = modulate(&bits, 2.0).unwrap();
        let expected = [c(1.0, 1.0), c(-1.0, 1.0), c(1.0, -1.0), c(-1.0, -1.0)];
        for (s, e) in out.symbols().samples().iter().zip(&expected) {
            assert!((s - e).norm() < 1e-15);
        }
    }

    #[test]
    fn every_symbol_has_the_declared_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let bits = BitBlock::random(64, &mut rng);
        for &power in &[0.25, 1.0, 7.5] {
            let out = modulate(&bits, power).unwrap();
            for s in out.symbols().samples() {
                assert!((s.norm_sqr() - power).abs() < 1e-12 * power);
            }
        }
    }

    #[test]
    fn modulate_demodulate_round_trip() {
        // All 4 pairs plus a longer random block.
        let bits = BitBlock::new(vec![false, false, false, true, true, false, true, true]);
        let back = demodulate(&modulate(&bits, 3.0).unwrap()).unwrap();
        assert_eq!(bits, back);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let bits = BitBlock::random(1024, &mut rng);
        let back = demodulate(&modulate(&bits, 1.0).unwrap()).unwrap();
        assert_eq!(bits, back);
    }

    #[test]
    fn odd_bit_count_is_rejected() {
        let bits = BitBlock::new(vec![true, false, true]);
        assert!(matches!(modulate(&bits, 1.0), Err(Error::InvalidLength(_))));
    }

    #[test]
    fn labeling_is_gray_around_the_circle() {
        // Walking the constellation by angle, consecutive points (including the
        // wrap-around) must differ in exactly one bit.
        let pairs = [
            [false, false], // (+, +)
            [true, false],  // (-, +)
            [true, true],   // (-, -)
            [false, true],  // (+, -)
        ];
        for i in 0..4 {
            let a = pairs[i];
            let b = pairs[(i + 1) % 4];
            let differing = (a[0] != b[0]) as usize + (a[1] != b[1]) as usize;
            assert_eq!(differing, 1);
        }
    }

    #[test]
    fn decision_follows_quadrant() {
        let decided = decide_sample(c(0.3, -0.9), 1.0);
        let a = 0.5f64.sqrt();
        assert!((decided - c(a, -a)).norm() < 1e-15);
    }

    #[test]
    fn decision_boundary_goes_positive() {
        let a = 0.5f64.sqrt();
        let decided = decide_sample(c(0.0, 0.0), 1.0);
        assert!((decided - c(a, a)).norm() < 1e-15);
    }

    #[test]
    fn deciding_clean_symbols_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let bits = BitBlock::random(256, &mut rng);
        let tx = modulate(&bits, 4.0).unwrap();
        let decided = hard_decide(tx.symbols(), 4.0);
        assert_eq!(tx, decided);
    }

    #[test]
    fn small_perturbations_do_not_move_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let bits = BitBlock::random(256, &mut rng);
        let tx = modulate(&bits, 1.0).unwrap();
        let mut noisy = tx.symbols().clone();
        for s in noisy.samples_mut() {
            *s += c(0.05, -0.08);
        }
        let decided = hard_decide(&noisy, 1.0);
        assert_eq!(demodulate(&decided).unwrap(), bits);
    }

    #[test]
    fn demodulate_rejects_off_constellation_samples() {
        let block = TimeBlock::new(vec![c(0.9, 0.7)]);
        // Bypass the checked constructor deliberately.
        let symbols = SymbolBlock {
            symbols: block,
            symbol_power: 1.0,
        };
        assert!(matches!(demodulate(&symbols), Err(Error::InvalidSymbol(_))));
    }

    #[test]
    fn checked_constructor_rejects_soft_samples() {
        let block = TimeBlock::new(vec![c(0.9, 0.7)]);
        assert!(SymbolBlock::new(block, 1.0).is_err());
    }
}
