//! Block transforms and circular convolution.
//!
//! Conventions used throughout the crate: the forward transform carries no
//! scale factor, the inverse carries 1/M. Parseval's identity therefore reads
//! `sum_m |x[m]|^2 = (1/M) * sum_l |X[l]|^2`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// One block of time-domain samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBlock {
    samples: Vec<Complex64>,
}

impl TimeBlock {
    pub fn new(samples: Vec<Complex64>) -> Self {
        Self { samples }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    /// Element-wise scaling by a complex weight, as a new block.
    pub fn scaled(&self, weight: Complex64) -> TimeBlock {
        TimeBlock::new(self.samples.iter().map(|s| s * weight).collect())
    }

    /// Total energy `sum |x[m]|^2` of the block.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }
}

impl std::ops::AddAssign<&TimeBlock> for TimeBlock {
    fn add_assign(&mut self, rhs: &TimeBlock) {
        assert_eq!(self.len(), rhs.len(), "blocks must have equal length");
        for (a, b) in self.samples.iter_mut().zip(rhs.samples.iter()) {
            *a += b;
        }
    }
}

/// The frequency bins of a transformed block.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>) -> Self {
        Self { bins }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    /// Total energy `sum |X[l]|^2` over the bins.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|b| b.norm_sqr()).sum()
    }
}

/// Plan cache keyed by (length, forward?).
type PlanCache = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

thread_local! {
    /// FFT plans are cached per thread so repeated transforms of the same
    /// length do not re-run the planner.
    static PLANS: RefCell<PlanCache> = RefCell::new(HashMap::new());
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, forward))
            .or_insert_with(|| {
                let direction = if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                };
                FftPlanner::new().plan_fft(len, direction)
            })
            .clone()
    })
}

/// Forward transform, no scale factor: `X[l] = sum_m x[m] e^{-j 2 pi m l / M}`.
pub fn dft(block: &TimeBlock) -> Result<Spectrum> {
    if block.is_empty() {
        return Err(Error::InvalidLength(
            "cannot transform an empty block".into(),
        ));
    }
    let mut bins = block.samples.clone();
    plan(bins.len(), true).process(&mut bins);
    Ok(Spectrum { bins })
}

/// Inverse transform with the 1/M factor:
/// `x[m] = (1/M) * sum_l X[l] e^{+j 2 pi m l / M}`.
pub fn idft(spectrum: &Spectrum) -> Result<TimeBlock> {
    if spectrum.is_empty() {
        return Err(Error::InvalidLength(
            "cannot transform an empty spectrum".into(),
        ));
    }
    let mut samples = spectrum.bins.clone();
    plan(samples.len(), false).process(&mut samples);
    let scale = 1.0 / samples.len() as f64;
    for s in &mut samples {
        *s *= scale;
    }
    Ok(TimeBlock { samples })
}

/// Circular convolution of two equal-length blocks, evaluated as the direct
/// sum `y[m] = sum_k a[k] b[(m - k) mod M]`. This is deliberately not routed
/// through the transforms so it can serve as an independent cross-check of
/// the convolution theorem.
pub fn circular_convolve(a: &TimeBlock, b: &TimeBlock) -> Result<TimeBlock> {
    if a.len() != b.len() {
        return Err(Error::InvalidLength(format!(
            "circular convolution needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidLength("cannot convolve empty blocks".into()));
    }
    let m = a.len();
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (i, y) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &ak) in a.samples.iter().enumerate() {
            acc += ak * b.samples[(i + m - k) % m];
        }
        *y = acc;
    }
    Ok(TimeBlock { samples: out })
}

/// `e^{-j 2 pi (exponent mod m) / m}`, the unit root that appears in every
/// per-tone formula in this crate. The exponent is reduced before the angle
/// is formed so large tone/lag products do not lose precision.
pub(crate) fn twiddle(m: usize, exponent: usize) -> Complex64 {
    debug_assert!(m > 0);
    Complex64::cis(-TAU * (exponent % m) as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_block<R: Rng>(len: usize, rng: &mut R) -> TimeBlock {
        TimeBlock::new(
            (0..len)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect(),
        )
    }

    /// Literal double sum with its own angle reduction, independent of the
    /// FFT backend.
    fn direct_dft(block: &TimeBlock) -> Vec<Complex64> {
        let m = block.len();
        (0..m)
            .map(|l| {
                block
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(n, &x)| {
                        let angle = -TAU * ((n * l) % m) as f64 / m as f64;
                        x * Complex64::new(angle.cos(), angle.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let block = TimeBlock::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let spectrum = dft(&block).unwrap();
        for bin in spectrum.bins() {
            assert!((bin - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_block_concentrates_in_bin_zero() {
        let block = TimeBlock::new(vec![c(1.0, 0.0); 4]);
        let spectrum = dft(&block).unwrap();
        assert!((spectrum.bins()[0] - c(4.0, 0.0)).norm() < 1e-15);
        for bin in &spectrum.bins()[1..] {
            assert!(bin.norm() < 1e-15);
        }
    }

    #[test]
    fn inverse_restores_constant_block() {
        let spectrum = Spectrum::new(vec![c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let block = idft(&spectrum).unwrap();
        for s in block.samples() {
            assert!((s - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_transform_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &m in &[2usize, 8, 12, 64, 512] {
            let block = random_block(m, &mut rng);
            let fast = dft(&block).unwrap();
            let slow = direct_dft(&block);
            let scale = slow.iter().map(|x| x.norm()).fold(1e-300, f64::max);
            assert!(
                max_abs_diff(fast.bins(), &slow) / scale < 1e-12,
                "transform disagrees with direct sum at M = {m}"
            );
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for &m in &[2usize, 4, 8, 32, 128, 512] {
            let block = random_block(m, &mut rng);
            let back = idft(&dft(&block).unwrap()).unwrap();
            assert!(
                max_abs_diff(block.samples(), back.samples()) < 1e-12,
                "round trip drifted at M = {m}"
            );
        }
    }

    #[test]
    fn parseval_energy_ratio_is_block_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &m in &[2usize, 16, 256] {
            let block = random_block(m, &mut rng);
            let spectrum = dft(&block).unwrap();
            let time_energy = block.energy();
            let freq_energy = spectrum.energy() / m as f64;
            assert!(
                (time_energy - freq_energy).abs() < 1e-10 * time_energy.max(1.0),
                "Parseval violated at M = {m}: {time_energy} vs {freq_energy}"
            );
        }
    }

    #[test]
    fn convolving_with_impulse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_block(8, &mut rng);
        let mut delta = TimeBlock::zeros(8);
        delta.samples_mut()[0] = c(1.0, 0.0);
        let out = circular_convolve(&a, &delta).unwrap();
        assert!(max_abs_diff(a.samples(), out.samples()) < 1e-15);
    }

    #[test]
    fn two_point_convolution_by_hand() {
        // (1, 1) (*) (1, -1): y[0] = 1*1 + 1*(-1) = 0, y[1] = 1*(-1) + 1*1 = 0.
        let a = TimeBlock::new(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let b = TimeBlock::new(vec![c(1.0, 0.0), c(-1.0, 0.0)]);
        let out = circular_convolve(&a, &b).unwrap();
        assert!(out.samples()[0].norm() < 1e-15);
        assert!(out.samples()[1].norm() < 1e-15);
    }

    #[test]
    fn convolution_theorem_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for &m in &[4usize, 32, 128] {
            let a = random_block(m, &mut rng);
            let b = random_block(m, &mut rng);
            let direct = circular_convolve(&a, &b).unwrap();
            let sa = dft(&a).unwrap();
            let sb = dft(&b).unwrap();
            let product = Spectrum::new(
                sa.bins()
                    .iter()
                    .zip(sb.bins())
                    .map(|(x, y)| x * y)
                    .collect(),
            );
            let via_transform = idft(&product).unwrap();
            let scale = direct
                .samples()
                .iter()
                .map(|x| x.norm())
                .fold(1e-300, f64::max);
            assert!(
                max_abs_diff(direct.samples(), via_transform.samples()) / scale < 1e-12,
                "convolution theorem violated at M = {m}"
            );
        }
    }

    #[test]
    fn transform_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = random_block(16, &mut rng);
        let b = random_block(16, &mut rng);
        let w = c(0.7, -1.3);
        let combined = TimeBlock::new(
            a.samples()
                .iter()
                .zip(b.samples())
                .map(|(x, y)| x * w + y)
                .collect(),
        );
        let lhs = dft(&combined).unwrap();
        let sa = dft(&a).unwrap();
        let sb = dft(&b).unwrap();
        let rhs: Vec<Complex64> = sa
            .bins()
            .iter()
            .zip(sb.bins())
            .map(|(x, y)| x * w + y)
            .collect();
        assert!(max_abs_diff(lhs.bins(), &rhs) < 1e-12);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(dft(&TimeBlock::zeros(0)).is_err());
        assert!(idft(&Spectrum::new(vec![])).is_err());
        assert!(circular_convolve(&TimeBlock::zeros(0), &TimeBlock::zeros(0)).is_err());
    }

    #[test]
    fn mismatched_convolution_lengths_are_rejected() {
        let a = TimeBlock::zeros(4);
        let b = TimeBlock::zeros(8);
        assert!(matches!(
            circular_convolve(&a, &b),
            Err(Error::InvalidLength(_))
        ));
    }

    #[test]
    fn twiddle_reduces_large_exponents_exactly() {
        // exponent and exponent + m must give the same unit root.
        let m = 512;
        for &e in &[0usize, 1, 511, 512, 513, 511 * 511] {
            let a = twiddle(m, e);
            let b = twiddle(m, e % m);
            assert!((a - b).norm() < 1e-15);
            assert!((a.norm() - 1.0).abs() < 1e-15);
        }
    }
}
