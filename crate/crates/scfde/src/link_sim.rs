//! Monte-Carlo simulation of the two-hop relay link.
//!
//! One trial sends a block from the source over independently drawn
//! frequency-selective channels to a multi-antenna relay, lets the relay
//! equalize, decide, and re-transmit the decisions across its antennas under
//! a power allocation, and finally equalizes again at the destination. There
//! is no direct source-destination path. Both hops see the same noise
//! variance, fixed by the configured transmit powers and the swept SNR in dB.
//!
//! # Determinism
//!
//! Every trial runs on its own counter-based generator stream selected by
//! `(base_seed, trial_index)`, so results are independent of how trials are
//! scheduled across threads. Within a trial the draw order is fixed:
//!
//! 1. the source bits,
//! 2. per relay antenna: first-hop taps, then that antenna's noise,
//! 3. all second-hop taps, relay-antenna major,
//! 4. per destination antenna: its noise.
//!
//! Noise with exactly zero variance consumes no randomness. The power
//! allocation solver is deterministic and consumes none either.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{add_awgn, draw_channel, transmit_over_channel, PowerDelayProfile};
use crate::error::{Error, Result};
use crate::mmse_fde::{
    equalize, feedback_system, ffe_taps, solve_feedback, EffectiveChannel, FeedbackMode,
    FeedbackTaps, FeedforwardTaps,
};
use crate::modem::{demodulate, hard_decide, modulate, BitBlock, SymbolBlock};
use crate::power_alloc::{
    effective_channel_dest, equal_allocation, optimize_fde, optimize_fde_dfe, Allocation,
    DestinationChannels, SolverOptions,
};
use crate::spectral::{dft, TimeBlock};

/// Average path power of the exponential delay profile used for every hop.
const AVG_PATH_POWER: f64 = 1.0;
/// Symbol duration entering the delay profile decay.
const SYMBOL_DURATION: f64 = 1.0;
/// Two-sided 95% normal quantile for the confidence halfwidth.
const Z_95: f64 = 1.96;

/// Which equalizer the relay and destination run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Feed-forward only.
    Fde,
    /// Feed-forward plus decision feedback.
    FdeDfe,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Fde => "fde",
            Scheme::FdeDfe => "fde-dfe",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the relay splits its transmit power across antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerAllocStrategy {
    /// Equal split.
    Epa,
    /// MSE-optimal weights from the fixed-point solver.
    Opa,
}

impl PowerAllocStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            PowerAllocStrategy::Epa => "epa",
            PowerAllocStrategy::Opa => "opa",
        }
    }
}

impl std::fmt::Display for PowerAllocStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the decision-feedback equalizers get their past decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackPolicy {
    /// Feed back the true symbols (isolates filter design from error
    /// propagation).
    Genie,
    /// Linear first pass, refined in-order second pass.
    DetectedTwoPass,
    /// Single pass that treats pre-block symbols as zero.
    ZeroPrefix,
}

impl FeedbackPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeedbackPolicy::Genie => "genie",
            FeedbackPolicy::DetectedTwoPass => "detected-two-pass",
            FeedbackPolicy::ZeroPrefix => "zero-prefix",
        }
    }
}

impl std::fmt::Display for FeedbackPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full description of one simulated operating point.
///
/// Unknown fields are rejected when deserializing, so a typo in a config file
/// fails loudly instead of silently running the defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Block length in symbols (a power of two, at least 2).
    pub m: usize,
    /// Cyclic prefix length in samples.
    pub l_cp: usize,
    /// Relay antennas.
    pub n_r: usize,
    /// Destination antennas.
    pub n_d: usize,
    /// First-hop channel taps.
    pub l_h: usize,
    /// Second-hop channel taps.
    pub l_g: usize,
    /// Delay spread of the exponential profile (both hops).
    pub sigma_t: f64,
    /// Source transmit power per symbol.
    pub p_s: f64,
    /// Relay transmit power budget per symbol.
    pub p_r: f64,
    /// SNR sweep points in dB (`p_s` over the per-sample noise variance).
    pub snr_db_grid: Vec<f64>,
    pub scheme: Scheme,
    pub power_alloc: PowerAllocStrategy,
    pub feedback_mode: FeedbackPolicy,
    /// Relay feedback taps; defaults to `l_h - 1` when absent.
    pub b_h: Option<usize>,
    /// Destination feedback taps; defaults to `l_g - 1` when absent.
    pub b_g: Option<usize>,
    /// Convergence tolerance of the power-allocation solver.
    pub epsilon: f64,
    /// Iteration budget of the power-allocation solver.
    pub max_iterations: usize,
    /// Blocks simulated per SNR point.
    pub trials: usize,
    /// Seed selecting the whole experiment's randomness.
    pub base_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 512,
            l_cp: 20,
            n_r: 1,
            n_d: 1,
            l_h: 3,
            l_g: 3,
            sigma_t: 2.0,
            p_s: 1.0,
            p_r: 1.0,
            snr_db_grid: vec![10.0],
            scheme: Scheme::Fde,
            power_alloc: PowerAllocStrategy::Epa,
            feedback_mode: FeedbackPolicy::DetectedTwoPass,
            b_h: None,
            b_g: None,
            epsilon: 1e-3,
            max_iterations: 500,
            trials: 100,
            base_seed: 0,
        }
    }
}

impl SimConfig {
    /// Relay feedback tap count actually in effect.
    pub fn b_h(&self) -> usize {
        self.b_h.unwrap_or(self.l_h - 1)
    }

    /// Destination feedback tap count actually in effect.
    pub fn b_g(&self) -> usize {
        self.b_g.unwrap_or(self.l_g - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m < 2 || !self.m.is_power_of_two() {
            return fail(format!(
                "m must be a power of two at least 2, got {}",
                self.m
            ));
        }
        if self.n_r == 0 || self.n_d == 0 {
            return fail("n_r and n_d must be at least 1".into());
        }
        if self.l_h == 0 || self.l_g == 0 {
            return fail("l_h and l_g must be at least 1".into());
        }
        if self.l_h > self.m || self.l_g > self.m {
            return fail(format!(
                "channels ({} and {} taps) must fit the block length {}",
                self.l_h, self.l_g, self.m
            ));
        }
        let memory = self.l_h.max(self.l_g) - 1;
        if self.l_cp < memory {
            return fail(format!(
                "l_cp = {} cannot absorb {} samples of channel memory",
                self.l_cp, memory
            ));
        }
        if self.l_cp > self.m {
            return fail(format!(
                "l_cp = {} exceeds the block length {}",
                self.l_cp, self.m
            ));
        }
        if !(self.sigma_t > 0.0 && self.sigma_t.is_finite()) {
            return fail(format!(
                "sigma_t must be positive and finite, got {}",
                self.sigma_t
            ));
        }
        if !(self.p_s > 0.0 && self.p_s.is_finite()) || !(self.p_r > 0.0 && self.p_r.is_finite()) {
            return fail(format!(
                "transmit powers must be positive and finite, got p_s = {}, p_r = {}",
                self.p_s, self.p_r
            ));
        }
        if self.snr_db_grid.is_empty() {
            return fail("snr_db_grid must contain at least one point".into());
        }
        if self
            .snr_db_grid
            .iter()
            .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return fail("snr_db_grid points must be numbers (+inf is allowed)".into());
        }
        if let Some(b) = self.b_h {
            if b > self.l_h - 1 {
                return fail(format!(
                    "b_h = {b} exceeds the channel memory {} of the first hop",
                    self.l_h - 1
                ));
            }
        }
        if let Some(b) = self.b_g {
            if b > self.l_g - 1 {
                return fail(format!(
                    "b_g = {b} exceeds the channel memory {} of the second hop",
                    self.l_g - 1
                ));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            ));
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be at least 1".into());
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        Ok(())
    }
}

/// Error counts of a single simulated block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    /// Source bits that arrived wrong at the destination.
    pub bit_errors: u64,
    /// Source bits the relay decided wrongly (before re-transmission).
    pub relay_bit_errors: u64,
    /// Bits carried by the block (`2 * m`).
    pub bits: u64,
    /// Whether the power-allocation solver converged (always true under the
    /// equal split).
    pub opa_converged: bool,
    /// Iterations the solver spent (0 under the equal split).
    pub opa_iterations: usize,
}

/// Aggregated statistics of one SNR point.
#[derive(Debug, Clone)]
pub struct BerRecord {
    pub scheme: Scheme,
    pub power_alloc: PowerAllocStrategy,
    pub n_r: usize,
    pub n_d: usize,
    pub l_h: usize,
    pub l_g: usize,
    pub sigma_t: f64,
    pub snr_db: f64,
    pub trials: usize,
    pub bits: u64,
    pub bit_errors: u64,
    /// End-to-end bit error rate.
    pub ber: f64,
    /// Halfwidth of the normal-approximation 95% confidence interval on the
    /// bit error rate.
    pub ci95_halfwidth: f64,
    /// Trials whose power-allocation solve hit the iteration budget.
    pub opa_nonconvergence_count: usize,
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// The per-trial generator: one stream per trial off a common seed, so any
/// subset of trials can be reproduced in isolation.
fn trial_rng(base_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial_index);
    rng
}

fn feedback_mode<'a>(policy: FeedbackPolicy, truth: &'a SymbolBlock) -> FeedbackMode<'a> {
    match policy {
        FeedbackPolicy::Genie => FeedbackMode::Genie(truth),
        FeedbackPolicy::DetectedTwoPass => FeedbackMode::DetectedTwoPass,
        FeedbackPolicy::ZeroPrefix => FeedbackMode::ZeroPrefix,
    }
}

/// Simulates one block at one SNR point. `trial_index` selects the random
/// stream; trials with different indices are statistically independent.
pub fn run_trial(cfg: &SimConfig, snr_db: f64, trial_index: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let m = cfg.m;
    // Equal noise variance at relay and destination, set by the source power.
    let noise_var = cfg.p_s / db_to_linear(snr_db);
    let snr_relay = if noise_var > 0.0 {
        cfg.p_s / noise_var
    } else {
        f64::INFINITY
    };
    let snr_dest = if noise_var > 0.0 {
        cfg.p_r / noise_var
    } else {
        f64::INFINITY
    };

    let mut rng = trial_rng(cfg.base_seed, trial_index);

    // Source block.
    let bits = BitBlock::random(2 * m, &mut rng);
    let tx = modulate(&bits, cfg.p_s)?;

    // First hop: independent channel and noise per relay antenna.
    let h_pdp = PowerDelayProfile::new(AVG_PATH_POWER, cfg.sigma_t, cfg.l_h, SYMBOL_DURATION)?;
    let mut relay_responses = Vec::with_capacity(cfg.n_r);
    let mut relay_spectra = Vec::with_capacity(cfg.n_r);
    for _ in 0..cfg.n_r {
        let taps = draw_channel(&h_pdp, &mut rng);
        let rx = transmit_over_channel(tx.symbols(), &taps, cfg.l_cp, noise_var, &mut rng)?;
        relay_responses.push(taps.freq_response(m)?);
        relay_spectra.push(dft(&rx)?);
    }

    // Relay equalization and decisions.
    let relay_ch = EffectiveChannel::from_branch_responses(&relay_responses, snr_relay)?;
    let relay_fb = match cfg.scheme {
        Scheme::Fde => FeedbackTaps::empty(),
        Scheme::FdeDfe => {
            let lags = FeedbackTaps::consecutive_indices(cfg.b_h());
            solve_feedback(&feedback_system(&relay_ch, &lags)?)?
        }
    };
    let relay_w = ffe_taps(&relay_ch, &relay_fb);
    let relay_out = equalize(
        &relay_spectra,
        &relay_w,
        &relay_fb,
        cfg.p_s,
        feedback_mode(cfg.feedback_mode, &tx),
    )?;
    let relay_bits = demodulate(relay_out.decisions())?;
    let relay_bit_errors = bits.count_differences(&relay_bits);

    // The relay re-transmits its decisions at its own power budget.
    let relay_tx = hard_decide(relay_out.decisions().symbols(), cfg.p_r);

    // Second hop: one channel per (relay antenna, destination antenna) pair.
    let g_pdp = PowerDelayProfile::new(AVG_PATH_POWER, cfg.sigma_t, cfg.l_g, SYMBOL_DURATION)?;
    let mut g_taps = Vec::with_capacity(cfg.n_r * cfg.n_d);
    for _ in 0..cfg.n_r * cfg.n_d {
        g_taps.push(draw_channel(&g_pdp, &mut rng));
    }
    let g = DestinationChannels::new(
        (0..cfg.n_r)
            .map(|i| {
                (0..cfg.n_d)
                    .map(|j| g_taps[i * cfg.n_d + j].freq_response(m))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
    )?;

    // Power allocation and the destination equalizer design.
    let lags = FeedbackTaps::consecutive_indices(cfg.b_g());
    let (alpha, dest_w, dest_fb, opa_converged, opa_iterations): (
        Allocation,
        FeedforwardTaps,
        FeedbackTaps,
        bool,
        usize,
    ) = match cfg.power_alloc {
        PowerAllocStrategy::Epa => {
            let alpha = equal_allocation(cfg.n_r)?;
            let ch = effective_channel_dest(&g, &alpha, snr_dest)?;
            let fb = match cfg.scheme {
                Scheme::Fde => FeedbackTaps::empty(),
                Scheme::FdeDfe => solve_feedback(&feedback_system(&ch, &lags)?)?,
            };
            let w = ffe_taps(&ch, &fb);
            (alpha, w, fb, true, 0)
        }
        PowerAllocStrategy::Opa => {
            let opts = SolverOptions {
                epsilon: cfg.epsilon,
                max_iterations: cfg.max_iterations,
                initial_alpha: None,
            };
            let outcome = match cfg.scheme {
                Scheme::Fde => optimize_fde(&g, snr_dest, &opts),
                Scheme::FdeDfe => optimize_fde_dfe(&g, snr_dest, &lags, &opts),
            };
            match outcome {
                Ok(state) => (state.alpha, state.w, state.fb, true, state.iterations),
                // A budget overrun is not fatal for the sweep: use the last
                // iterate and let the record count the event.
                Err(Error::NonConvergence(state)) => {
                    (state.alpha, state.w, state.fb, false, state.iterations)
                }
                Err(other) => return Err(other),
            }
        }
    };

    // Second-hop transmission: every destination antenna hears the weighted
    // sum of the relay antennas, then its own noise.
    let mut dest_spectra = Vec::with_capacity(cfg.n_d);
    for j in 0..cfg.n_d {
        let mut sum = TimeBlock::zeros(m);
        for (i, &weight) in alpha.weights().iter().enumerate() {
            let scaled = relay_tx.symbols().scaled(weight);
            let received =
                transmit_over_channel(&scaled, &g_taps[i * cfg.n_d + j], cfg.l_cp, 0.0, &mut rng)?;
            sum += &received;
        }
        add_awgn(&mut sum, noise_var, &mut rng);
        dest_spectra.push(dft(&sum)?);
    }

    let dest_out = equalize(
        &dest_spectra,
        &dest_w,
        &dest_fb,
        cfg.p_r,
        feedback_mode(cfg.feedback_mode, &relay_tx),
    )?;
    let rx_bits = demodulate(dest_out.decisions())?;
    let bit_errors = bits.count_differences(&rx_bits);

    Ok(TrialResult {
        bit_errors,
        relay_bit_errors,
        bits: 2 * m as u64,
        opa_converged,
        opa_iterations,
    })
}

/// Runs the configured number of trials at every SNR point, in parallel over
/// trials. Identical configurations produce identical records regardless of
/// the number of worker threads.
pub fn run_sweep(cfg: &SimConfig) -> Result<Vec<BerRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.snr_db_grid.len());
    for &snr_db in &cfg.snr_db_grid {
        let trials: Vec<TrialResult> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(cfg, snr_db, t))
            .collect::<Result<Vec<_>>>()?;
        let bits: u64 = trials.iter().map(|t| t.bits).sum();
        let bit_errors: u64 = trials.iter().map(|t| t.bit_errors).sum();
        let opa_nonconvergence_count = trials.iter().filter(|t| !t.opa_converged).count();
        let ber = bit_errors as f64 / bits as f64;
        let ci95_halfwidth = Z_95 * (ber * (1.0 - ber) / bits as f64).sqrt();
        records.push(BerRecord {
            scheme: cfg.scheme,
            power_alloc: cfg.power_alloc,
            n_r: cfg.n_r,
            n_d: cfg.n_d,
            l_h: cfg.l_h,
            l_g: cfg.l_g,
            sigma_t: cfg.sigma_t,
            snr_db,
            trials: cfg.trials,
            bits,
            bit_errors,
            ber,
            ci95_halfwidth,
            opa_nonconvergence_count,
        });
    }
    Ok(records)
}
