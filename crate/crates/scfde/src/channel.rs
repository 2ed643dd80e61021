//! Random frequency-selective channels and cyclic-prefix transmission.
//!
//! Tap `l` of a channel draw is zero-mean circularly symmetric complex
//! Gaussian with variance given by the exponential power delay profile
//!
//! ```text
//! p(l) = (avg_power / delay_spread) * exp(-l * symbol_duration / delay_spread)
//! ```
//!
//! so a larger delay spread pushes energy into later taps. Transmission
//! prepends a cyclic prefix, applies the tap filter, and strips the prefix
//! again; as long as the prefix covers the channel memory, the block sees a
//! circular convolution with the taps.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spectral::{twiddle, TimeBlock};

/// Exponential delay profile: the per-tap variances of a random channel.
#[derive(Debug, Clone)]
pub struct PowerDelayProfile {
    avg_power: f64,
    delay_spread: f64,
    num_taps: usize,
    symbol_duration: f64,
    /// Extra factor applied to every tap power; 1 unless normalization to a
    /// unit (well, `avg_power`) tap-power sum was requested.
    scale: f64,
}

impl PowerDelayProfile {
    /// Plain profile with no normalization: tap powers follow the exponential
    /// law directly and their sum depends on the tap count and decay rate.
    pub fn new(
        avg_power: f64,
        delay_spread: f64,
        num_taps: usize,
        symbol_duration: f64,
    ) -> Result<Self> {
        if !(avg_power >= 0.0 && avg_power.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "average path power must be finite and non-negative, got {avg_power}"
            )));
        }
        if !(delay_spread > 0.0 && delay_spread.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delay spread must be positive and finite, got {delay_spread}"
            )));
        }
        if !(symbol_duration > 0.0 && symbol_duration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "symbol duration must be positive and finite, got {symbol_duration}"
            )));
        }
        if num_taps == 0 {
            return Err(Error::InvalidConfig(
                "a channel needs at least one tap".into(),
            ));
        }
        Ok(Self {
            avg_power,
            delay_spread,
            num_taps,
            symbol_duration,
            scale: 1.0,
        })
    }

    /// Rescales the profile so the tap powers sum to `avg_power`, which keeps
    /// total received energy comparable across different tap counts and decay
    /// rates. Off by default.
    pub fn normalized(mut self) -> Self {
        let raw_total: f64 = (0..self.num_taps).map(|l| self.raw_power(l)).sum();
        self.scale = if raw_total > 0.0 {
            self.avg_power / raw_total
        } else {
            1.0
        };
        self
    }

    fn raw_power(&self, l: usize) -> f64 {
        (self.avg_power / self.delay_spread)
            * (-(l as f64) * self.symbol_duration / self.delay_spread).exp()
    }

    /// Variance of tap `l`.
    pub fn tap_power(&self, l: usize) -> Result<f64> {
        if l >= self.num_taps {
            return Err(Error::IndexError {
                what: "power delay profile",
                index: l,
                len: self.num_taps,
            });
        }
        Ok(self.raw_power(l) * self.scale)
    }

    pub fn num_taps(&self) -> usize {
        self.num_taps
    }
}

/// One realization of a tapped delay line.
#[derive(Debug, Clone)]
pub struct ChannelTaps {
    taps: Vec<Complex64>,
}

impl ChannelTaps {
    pub fn new(taps: Vec<Complex64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidLength(
                "a channel needs at least one tap".into(),
            ));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Per-tone response over an `m`-point block:
    /// `U[l] = sum_k taps[k] e^{-j 2 pi k l / m}`, i.e. the transform of the
    /// zero-padded tap vector, evaluated here as the literal sum.
    pub fn freq_response(&self, m: usize) -> Result<ToneResponse> {
        if m == 0 {
            return Err(Error::InvalidLength(
                "cannot evaluate a zero-tone response".into(),
            ));
        }
        if self.taps.len() > m {
            return Err(Error::InvalidLength(format!(
                "{} taps do not fit a {m}-point block",
                self.taps.len()
            )));
        }
        let per_tone = (0..m)
            .map(|l| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(k, &tap)| tap * twiddle(m, k * l))
                    .sum()
            })
            .collect();
        Ok(ToneResponse { per_tone })
    }
}

/// A channel seen in the frequency domain: one complex gain per tone.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneResponse {
    per_tone: Vec<Complex64>,
}

impl ToneResponse {
    pub fn new(per_tone: Vec<Complex64>) -> Self {
        Self { per_tone }
    }

    pub fn len(&self) -> usize {
        self.per_tone.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_tone.is_empty()
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.per_tone
    }

    pub fn gain(&self, tone: usize) -> Complex64 {
        self.per_tone[tone]
    }
}

/// Draws one channel realization: tap `l` is `CN(0, p(l))`, sampled as
/// independent real and imaginary parts with variance `p(l) / 2` each, in tap
/// order (real then imaginary).
pub fn draw_channel<R: Rng + ?Sized>(pdp: &PowerDelayProfile, rng: &mut R) -> ChannelTaps {
    let taps = (0..pdp.num_taps())
        .map(|l| {
            let s = (pdp.tap_power(l).expect("tap index in range") / 2.0).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect();
    ChannelTaps { taps }
}

/// Adds circularly symmetric complex Gaussian noise of the given variance to
/// every sample. A variance of exactly zero consumes no randomness, so
/// noiseless runs stay aligned with noisy ones up to this call.
pub fn add_awgn<R: Rng + ?Sized>(block: &mut TimeBlock, variance: f64, rng: &mut R) {
    assert!(
        variance >= 0.0 && !variance.is_nan(),
        "noise variance must be non-negative"
    );
    if variance == 0.0 {
        return;
    }
    let s = (variance / 2.0).sqrt();
    for x in block.samples_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *x += Complex64::new(re * s, im * s);
    }
}

/// Sends one block over a tapped delay line with a cyclic prefix of `l_cp`
/// samples: prefix the last `l_cp` samples, filter, drop the first `l_cp`
/// outputs, add noise. The prefix must cover the channel memory
/// (`l_cp >= taps - 1`) and cannot exceed the block length.
pub fn transmit_over_channel<R: Rng + ?Sized>(
    block: &TimeBlock,
    taps: &ChannelTaps,
    l_cp: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<TimeBlock> {
    let m = block.len();
    if m == 0 {
        return Err(Error::InvalidLength(
            "cannot transmit an empty block".into(),
        ));
    }
    if taps.len() > l_cp + 1 {
        return Err(Error::CpTooShort {
            l_cp,
            required: taps.len() - 1,
        });
    }
    if l_cp > m {
        return Err(Error::InvalidLength(format!(
            "cyclic prefix of {l_cp} samples exceeds the block length {m}"
        )));
    }

    let x = block.samples();
    let mut out = TimeBlock::zeros(m);
    for (out_m, y) in out.samples_mut().iter_mut().enumerate() {
        // Position in the prefixed sequence; k <= l_cp <= n keeps n - k valid.
        let n = out_m + l_cp;
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &tap) in taps.taps().iter().enumerate() {
            let idx = n - k;
            let sample = if idx < l_cp {
                x[m - l_cp + idx] // still inside the prefix copy of the tail
            } else {
                x[idx - l_cp]
            };
            acc += tap * sample;
        }
        *y = acc;
    }
    add_awgn(&mut out, noise_var, rng);
    Ok(out)
}
