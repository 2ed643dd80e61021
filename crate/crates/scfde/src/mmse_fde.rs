//! Per-tone MMSE equalization with optional time-domain decision feedback.
//!
//! The receiver combines any number of receive branches tone by tone with
//! feed-forward weights, returns to the time domain, and (optionally) cancels
//! postcursors with a short feedback filter applied to past decisions. The
//! feed-forward weights have a per-tone closed form; the feedback taps come
//! from a small Hermitian Toeplitz system built from the per-tone residual
//! noise fractions.
//!
//! Design happens on an [`EffectiveChannel`] — per-tone, per-branch gains
//! plus the operating SNR — regardless of whether those gains describe a
//! physical hop or a weighted combination of several antennas.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::ToneResponse;
use crate::error::{Error, Result};
use crate::modem::{decide_sample, hard_decide, SymbolBlock};
use crate::spectral::{idft, twiddle, Spectrum, TimeBlock};

/// Condition-number ceiling above which the feedback design system is
/// reported as singular instead of solved.
const MAX_FEEDBACK_CONDITION: f64 = 1e12;

/// Per-tone, per-branch channel gains with the operating SNR attached.
///
/// `snr` is the ratio of per-symbol transmit power to per-sample noise
/// variance at the receiver input; `f64::INFINITY` models a noiseless link.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    /// Row-major gains: `u[tone * branches + branch]`.
    u: Vec<Complex64>,
    branches: usize,
    snr: f64,
}

impl EffectiveChannel {
    /// Builds the channel from `tones[l][n]` = gain of branch `n` on tone `l`.
    pub fn from_tones(tones: Vec<Vec<Complex64>>, snr: f64) -> Result<Self> {
        if tones.is_empty() {
            return Err(Error::InvalidLength("need at least one tone".into()));
        }
        let branches = tones[0].len();
        if branches == 0 {
            return Err(Error::InvalidLength("need at least one branch".into()));
        }
        if tones.iter().any(|row| row.len() != branches) {
            return Err(Error::InvalidLength(
                "every tone must list the same number of branches".into(),
            ));
        }
        check_snr(snr)?;
        Ok(Self {
            u: tones.into_iter().flatten().collect(),
            branches,
            snr,
        })
    }

    /// Builds the channel from one per-tone response per branch.
    pub fn from_branch_responses(responses: &[ToneResponse], snr: f64) -> Result<Self> {
        if responses.is_empty() {
            return Err(Error::InvalidLength("need at least one branch".into()));
        }
        let m = responses[0].len();
        if m == 0 {
            return Err(Error::InvalidLength("need at least one tone".into()));
        }
        if responses.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidLength(
                "every branch must cover the same number of tones".into(),
            ));
        }
        check_snr(snr)?;
        let branches = responses.len();
        let mut u = Vec::with_capacity(m * branches);
        for l in 0..m {
            for response in responses {
                u.push(response.gain(l));
            }
        }
        Ok(Self { u, branches, snr })
    }

    pub fn num_tones(&self) -> usize {
        self.u.len() / self.branches
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn gain(&self, tone: usize, branch: usize) -> Complex64 {
        self.u[tone * self.branches + branch]
    }

    /// `sum_n |u[l][n]|^2`, the combined branch energy on one tone.
    fn branch_energy(&self, tone: usize) -> f64 {
        self.u[tone * self.branches..(tone + 1) * self.branches]
            .iter()
            .map(|g| g.norm_sqr())
            .sum()
    }

    fn inverse_snr(&self) -> f64 {
        if self.snr.is_finite() {
            1.0 / self.snr
        } else {
            0.0
        }
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "snr must be positive (or infinite for a noiseless link), got {snr}"
        )));
    }
    Ok(())
}

/// Feed-forward combining weights, one per tone and branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardTaps {
    /// Row-major weights: `w[tone * branches + branch]`.
    w: Vec<Complex64>,
    branches: usize,
}

impl FeedforwardTaps {
    pub fn from_tones(tones: Vec<Vec<Complex64>>) -> Result<Self> {
        if tones.is_empty() || tones[0].is_empty() {
            return Err(Error::InvalidLength("weights cannot be empty".into()));
        }
        let branches = tones[0].len();
        if tones.iter().any(|row| row.len() != branches) {
            return Err(Error::InvalidLength(
                "every tone must carry the same number of branch weights".into(),
            ));
        }
        Ok(Self {
            w: tones.into_iter().flatten().collect(),
            branches,
        })
    }

    pub fn num_tones(&self) -> usize {
        self.w.len() / self.branches
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn tap(&self, tone: usize, branch: usize) -> Complex64 {
        self.w[tone * self.branches + branch]
    }

    pub fn set_tap(&mut self, tone: usize, branch: usize, value: Complex64) {
        self.w[tone * self.branches + branch] = value;
    }

    /// `sum_{l,n} |w[l][n]|^2` over all tones and branches.
    pub fn energy(&self) -> f64 {
        self.w.iter().map(|w| w.norm_sqr()).sum()
    }
}

/// Feedback filter: strictly causal taps at the given symbol lags.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTaps {
    indices: Vec<usize>,
    coeffs: Vec<Complex64>,
}

impl FeedbackTaps {
    /// No feedback at all; design and equalization degenerate to the linear
    /// receiver.
    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    /// Taps with explicit coefficients; lags are validated against the block
    /// length `m`.
    pub fn new(indices: Vec<usize>, coeffs: Vec<Complex64>, m: usize) -> Result<Self> {
        if indices.len() != coeffs.len() {
            return Err(Error::InvalidLength(format!(
                "{} lags but {} coefficients",
                indices.len(),
                coeffs.len()
            )));
        }
        validate_lags(&indices, m)?;
        Ok(Self { indices, coeffs })
    }

    /// All-zero taps at the given lags (the starting point of iterative
    /// designs).
    pub fn zeros(indices: &[usize], m: usize) -> Result<Self> {
        validate_lags(indices, m)?;
        Ok(Self {
            indices: indices.to_vec(),
            coeffs: vec![Complex64::new(0.0, 0.0); indices.len()],
        })
    }

    /// The usual contiguous lag set `1, 2, ..., b`.
    pub fn consecutive_indices(b: usize) -> Vec<usize> {
        (1..=b).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Largest absolute difference to another tap set over the same lags.
    pub fn max_coeff_distance(&self, other: &FeedbackTaps) -> f64 {
        assert_eq!(self.indices, other.indices, "lag sets must match");
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Per-tone response the equalizer output is shaped towards:
    /// `D[l] = 1 + sum_k conj(f_k) e^{-j 2 pi k l / m}`.
    pub fn combined_response(&self, m: usize, tone: usize) -> Complex64 {
        let mut d = Complex64::new(1.0, 0.0);
        for (&k, f) in self.indices.iter().zip(&self.coeffs) {
            d += f.conj() * twiddle(m, k * tone);
        }
        d
    }
}

fn validate_lags(indices: &[usize], m: usize) -> Result<()> {
    for (i, &k) in indices.iter().enumerate() {
        if k == 0 || k >= m {
            return Err(Error::IndexError {
                what: "feedback lag",
                index: k,
                len: m,
            });
        }
        if i > 0 && indices[i - 1] >= k {
            return Err(Error::InvalidConfig(format!(
                "feedback lags must be strictly increasing, got {} after {}",
                k,
                indices[i - 1]
            )));
        }
    }
    Ok(())
}

/// Per-tone MMSE feed-forward weights for a given feedback filter:
///
/// ```text
/// w[l][n] = conj(u[l][n]) * D[l] / (1/snr + sum_n |u[l][n]|^2)
/// ```
///
/// With no feedback taps, `D[l] = 1` and this is the plain linear MMSE
/// combiner. A tone with no signal energy on a noiseless link gets zero
/// weight.
pub fn ffe_taps(ch: &EffectiveChannel, fb: &FeedbackTaps) -> FeedforwardTaps {
    let m = ch.num_tones();
    let inv_snr = ch.inverse_snr();
    let mut w = Vec::with_capacity(m * ch.branches());
    for l in 0..m {
        let d = fb.combined_response(m, l);
        let denom = inv_snr + ch.branch_energy(l);
        for n in 0..ch.branches() {
            if denom == 0.0 {
                w.push(Complex64::new(0.0, 0.0));
            } else {
                w.push(ch.gain(l, n).conj() * d / denom);
            }
        }
    }
    FeedforwardTaps {
        w,
        branches: ch.branches(),
    }
}

/// Reference implementation of [`ffe_taps`] that solves the per-tone normal
/// equations `((1/snr) I + h h^H) w[l] = h D[l]` with `h = conj(u[l])` by
/// dense LU instead of using the closed form. Kept deliberately separate so
/// the two routes can be checked against each other; requires a finite snr
/// (the normal matrix is positive definite only then).
pub fn ffe_taps_by_solve(ch: &EffectiveChannel, fb: &FeedbackTaps) -> FeedforwardTaps {
    assert!(
        ch.snr().is_finite(),
        "the dense route needs a finite snr to stay positive definite"
    );
    let m = ch.num_tones();
    let n = ch.branches();
    let inv_snr = Complex64::new(ch.inverse_snr(), 0.0);
    let mut w = Vec::with_capacity(m * n);
    for l in 0..m {
        let d = fb.combined_response(m, l);
        let h = DVector::from_iterator(n, (0..n).map(|b| ch.gain(l, b).conj()));
        let normal = DMatrix::identity(n, n) * inv_snr + &h * h.adjoint();
        let rhs = h * d;
        let sol = normal
            .lu()
            .solve(&rhs)
            .expect("normal matrix is positive definite for finite snr");
        w.extend(sol.iter().copied());
    }
    FeedforwardTaps { w, branches: n }
}

/// The small Hermitian Toeplitz system whose solution gives the feedback
/// taps.
#[derive(Debug, Clone)]
pub struct FeedbackSystem {
    m: usize,
    indices: Vec<usize>,
    /// Right-hand side `v[k_p]`.
    v_vec: Vec<Complex64>,
    /// Row-major `B x B` matrix with entries `v[k_p - k_q]`.
    v_mat: Vec<Complex64>,
}

impl FeedbackSystem {
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn block_len(&self) -> usize {
        self.m
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn v_vec(&self) -> &[Complex64] {
        &self.v_vec
    }

    pub fn v_entry(&self, p: usize, q: usize) -> Complex64 {
        self.v_mat[p * self.indices.len() + q]
    }
}

/// Builds the feedback design system for the given lag set.
///
/// The building block is the lag autocorrelation of the per-tone residual
/// fraction `q[l] = (1/snr) / (1/snr + sum_n |u[l][n]|^2)`:
///
/// ```text
/// v[k] = (1/M) * sum_l q[l] e^{-j 2 pi k l / M}
/// ```
///
/// with `v[-k] = conj(v[k])`. The matrix entry `(p, q)` is `v[k_p - k_q]` —
/// Hermitian Toeplitz in the lag differences — and the right-hand side is
/// `v[k_p]`. A tone with no signal energy on a noiseless link contributes the
/// limiting fraction `q[l] = 1`.
pub fn feedback_system(ch: &EffectiveChannel, indices: &[usize]) -> Result<FeedbackSystem> {
    let m = ch.num_tones();
    validate_lags(indices, m)?;
    let inv_snr = ch.inverse_snr();
    let q: Vec<f64> = (0..m)
        .map(|l| {
            let denom = inv_snr + ch.branch_energy(l);
            if denom == 0.0 {
                1.0
            } else {
                inv_snr / denom
            }
        })
        .collect();

    let v = |k: usize| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, &ql) in q.iter().enumerate() {
            acc += ql * twiddle(m, k * l);
        }
        acc / m as f64
    };

    let b = indices.len();
    let v_vec: Vec<Complex64> = indices.iter().map(|&k| v(k)).collect();
    let mut v_mat = vec![Complex64::new(0.0, 0.0); b * b];
    for p in 0..b {
        for s in 0..b {
            let entry = if indices[p] >= indices[s] {
                v(indices[p] - indices[s])
            } else {
                v(indices[s] - indices[p]).conj()
            };
            v_mat[p * b + s] = entry;
        }
    }
    Ok(FeedbackSystem {
        m,
        indices: indices.to_vec(),
        v_vec,
        v_mat,
    })
}

/// Solves the feedback design system: `f = -V^{-1} v`. An empty lag set
/// yields the empty filter; a system whose condition estimate exceeds
/// `1e12` is refused as singular.
pub fn solve_feedback(system: &FeedbackSystem) -> Result<FeedbackTaps> {
    let b = system.dim();
    if b == 0 {
        return Ok(FeedbackTaps::empty());
    }
    let v_mat = DMatrix::from_fn(b, b, |p, q| system.v_entry(p, q));
    let singular_values = v_mat.clone().svd(false, false).singular_values;
    let s_max = singular_values[0];
    let s_min = singular_values[b - 1];
    let cond = if s_min > 0.0 {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    if !cond.is_finite() || cond > MAX_FEEDBACK_CONDITION {
        return Err(Error::SingularSystem { cond });
    }
    let rhs = DVector::from_column_slice(system.v_vec());
    let sol = v_mat
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem { cond })?;
    FeedbackTaps::new(
        system.indices().to_vec(),
        sol.iter().map(|f| -f).collect(),
        system.block_len(),
    )
}

/// Model-based mean squared error per symbol of the equalizer `(w, fb)` on
/// channel `ch`, assuming correct feedback decisions:
///
/// ```text
/// mse = (sigma_s2 / M) * sum_l |T[l] - D[l]|^2  +  (sigma_n2 / M) * sum_{l,n} |w[l][n]|^2
/// ```
///
/// where `T[l] = sum_n w[l][n] u[l][n]` is the combined signal response and
/// `D[l]` the target response of the feedback filter. The noise variance is
/// passed explicitly (per time-domain sample) so the expression can be
/// evaluated at operating points other than `ch.snr()`.
pub fn analytic_mse(
    ch: &EffectiveChannel,
    w: &FeedforwardTaps,
    fb: &FeedbackTaps,
    sigma_s2: f64,
    sigma_n2: f64,
) -> f64 {
    let m = ch.num_tones();
    assert_eq!(w.num_tones(), m, "weights must cover every tone");
    assert_eq!(
        w.branches(),
        ch.branches(),
        "weights must cover every branch"
    );
    let mut signal_mismatch = 0.0;
    let mut noise_gain = 0.0;
    for l in 0..m {
        let mut t = Complex64::new(0.0, 0.0);
        for n in 0..ch.branches() {
            let tap = w.tap(l, n);
            t += tap * ch.gain(l, n);
            noise_gain += tap.norm_sqr();
        }
        let d = fb.combined_response(m, l);
        signal_mismatch += (t - d).norm_sqr();
    }
    (sigma_s2 * signal_mismatch + sigma_n2 * noise_gain) / m as f64
}

/// How the equalizer obtains the past decisions it feeds back.
#[derive(Debug, Clone, Copy)]
pub enum FeedbackMode<'a> {
    /// No feedback subtraction even if taps are present, i.e. the plain
    /// linear receiver.
    Linear,
    /// Feed back the true transmitted symbols (a genie bound that isolates
    /// the filter design from decision errors).
    Genie(&'a SymbolBlock),
    /// First pass decides every symbol linearly; the second pass re-decides
    /// in order, feeding back refined decisions and using first-pass
    /// decisions where the circular lag reaches ahead of the current symbol.
    DetectedTwoPass,
    /// Single in-order pass that treats symbols before the block start as
    /// zero instead of wrapping around.
    ZeroPrefix,
}

/// Soft equalizer output and the hard decisions taken on it.
#[derive(Debug, Clone)]
pub struct EqualizedBlock {
    soft: TimeBlock,
    decisions: SymbolBlock,
}

impl EqualizedBlock {
    pub fn soft(&self) -> &TimeBlock {
        &self.soft
    }

    pub fn decisions(&self) -> &SymbolBlock {
        &self.decisions
    }
}

/// Runs the equalizer over one received block (one spectrum per branch):
/// combine tones with the feed-forward weights, return to the time domain,
/// and subtract the feedback filter output according to `mode`. Decisions are
/// taken at the given per-symbol power.
pub fn equalize(
    received: &[Spectrum],
    w: &FeedforwardTaps,
    fb: &FeedbackTaps,
    power: f64,
    mode: FeedbackMode<'_>,
) -> Result<EqualizedBlock> {
    let m = w.num_tones();
    if received.len() != w.branches() {
        return Err(Error::InvalidLength(format!(
            "{} received spectra for {} branches",
            received.len(),
            w.branches()
        )));
    }
    if received.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidLength(
            "every received spectrum must cover every tone".into(),
        ));
    }
    validate_lags(fb.indices(), m)?;
    if let FeedbackMode::Genie(truth) = mode {
        if truth.len() != m {
            return Err(Error::InvalidLength(format!(
                "genie block has {} symbols, expected {m}",
                truth.len()
            )));
        }
    }

    // Tone-by-tone combining, then back to time.
    let combined = Spectrum::new(
        (0..m)
            .map(|l| {
                received
                    .iter()
                    .enumerate()
                    .map(|(n, r)| r.bins()[l] * w.tap(l, n))
                    .sum()
            })
            .collect(),
    );
    let linear = idft(&combined)?;

    if fb.is_empty() || matches!(mode, FeedbackMode::Linear) {
        let decisions = hard_decide(&linear, power);
        return Ok(EqualizedBlock {
            soft: linear,
            decisions,
        });
    }

    let mut soft = vec![Complex64::new(0.0, 0.0); m];
    let mut decided: Vec<Complex64>;
    match mode {
        FeedbackMode::Linear => unreachable!("handled above"),
        FeedbackMode::Genie(truth) => {
            let past = truth.symbols().samples();
            decided = Vec::with_capacity(m);
            for i in 0..m {
                let mut acc = linear.samples()[i];
                for (&k, f) in fb.indices().iter().zip(fb.coeffs()) {
                    acc -= f.conj() * past[(i + m - k) % m];
                }
                soft[i] = acc;
                decided.push(decide_sample(acc, power));
            }
        }
        FeedbackMode::DetectedTwoPass => {
            // Pass 1: linear decisions seed the feedback memory; pass 2
            // overwrites them in order as refined decisions become available.
            decided = hard_decide(&linear, power).symbols().samples().to_vec();
            for i in 0..m {
                let mut acc = linear.samples()[i];
                for (&k, f) in fb.indices().iter().zip(fb.coeffs()) {
                    acc -= f.conj() * decided[(i + m - k) % m];
                }
                soft[i] = acc;
                decided[i] = decide_sample(acc, power);
            }
        }
        FeedbackMode::ZeroPrefix => {
            decided = vec![Complex64::new(0.0, 0.0); m];
            for i in 0..m {
                let mut acc = linear.samples()[i];
                for (&k, f) in fb.indices().iter().zip(fb.coeffs()) {
                    if k <= i {
                        acc -= f.conj() * decided[i - k];
                    }
                }
                soft[i] = acc;
                decided[i] = decide_sample(acc, power);
            }
        }
    }

    // The per-sample decisions are constellation points by construction, so
    // wrapping them cannot fail.
    let decisions = hard_decide(&TimeBlock::new(decided), power);
    Ok(EqualizedBlock {
        soft: TimeBlock::new(soft),
        decisions,
    })
}
