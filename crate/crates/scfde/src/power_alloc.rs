//! Transmit-power allocation across the relay antennas.
//!
//! The relay scales antenna `i`'s copy of the decided block by a complex
//! weight `alpha_i` under the unit budget `sum_i |alpha_i|^2 = 1`. Besides
//! the equal split, this module finds the weights that minimize the
//! destination equalizer's model MSE by iterating the first-order optimality
//! conditions of the constrained problem:
//!
//! 1. design the equalizer for the current weights,
//! 2. read off the constraint multiplier from the feed-forward energy,
//! 3. re-solve the weight stationarity equation,
//!
//! until the weights (and, with decision feedback, the target response) stop
//! moving. A finite-difference residual check certifies any claimed solution
//! independently of the update formulas.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::ToneResponse;
use crate::error::{Error, Result};
use crate::mmse_fde::{analytic_mse, ffe_taps, EffectiveChannel, FeedbackTaps, FeedforwardTaps};
use crate::spectral::twiddle;

/// Central-difference step of the residual certifier.
const RESIDUAL_STEP: f64 = 1e-6;

/// Tolerance on `sum |alpha_i|^2 - 1` accepted for a caller-provided starting
/// point.
const INITIAL_BUDGET_TOL: f64 = 1e-6;

/// Per-antenna complex transmit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    alpha: Vec<Complex64>,
}

impl Allocation {
    pub fn new(alpha: Vec<Complex64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidLength(
                "an allocation needs at least one weight".into(),
            ));
        }
        if alpha.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidConfig(
                "allocation weights must be finite".into(),
            ));
        }
        Ok(Self { alpha })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.alpha
    }

    /// `sum_i |alpha_i|^2`, the fraction of the relay power budget in use.
    pub fn total_power(&self) -> f64 {
        self.alpha.iter().map(|a| a.norm_sqr()).sum()
    }

    /// The same allocation with every weight rotated by a common phase. The
    /// destination cost only sees `|alpha|` patterns, so this maps optima to
    /// optima.
    pub fn rotated(&self, phase: f64) -> Allocation {
        let rot = Complex64::cis(phase);
        Allocation {
            alpha: self.alpha.iter().map(|a| a * rot).collect(),
        }
    }

    /// The same weight pattern rescaled to use the full unit power budget.
    /// The optimum always sits exactly on the budget (slack would leave
    /// relay power on the table that strictly lowers the destination MSE),
    /// so snapping an iterate onto it yields the feasible representative of
    /// the pattern without disturbing the per-antenna split.
    pub fn scaled_to_unit_power(&self) -> Allocation {
        let p = self.total_power();
        if p == 0.0 {
            return self.clone();
        }
        let s = 1.0 / p.sqrt();
        Allocation {
            alpha: self.alpha.iter().map(|a| a * s).collect(),
        }
    }

    /// Largest absolute per-weight difference to another allocation.
    pub fn max_distance(&self, other: &Allocation) -> f64 {
        assert_eq!(
            self.len(),
            other.len(),
            "allocations must have equal length"
        );
        self.alpha
            .iter()
            .zip(&other.alpha)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Uniform split of the unit budget: `alpha_i = 1 / sqrt(n_r)`.
pub fn equal_allocation(n_r: usize) -> Result<Allocation> {
    if n_r == 0 {
        return Err(Error::InvalidConfig(
            "the relay needs at least one antenna".into(),
        ));
    }
    let a = 1.0 / (n_r as f64).sqrt();
    Allocation::new(vec![Complex64::new(a, 0.0); n_r])
}

/// The second-hop channels: one per-tone response per (relay antenna,
/// destination antenna) pair.
#[derive(Debug, Clone)]
pub struct DestinationChannels {
    /// Flattened responses, relay-antenna major: `per_pair[i * n_d + j]`.
    per_pair: Vec<ToneResponse>,
    n_r: usize,
    n_d: usize,
    m: usize,
}

impl DestinationChannels {
    /// Builds the bank from `rows[i][j]` = response from relay antenna `i` to
    /// destination antenna `j`. All responses must cover the same tones.
    pub fn new(rows: Vec<Vec<ToneResponse>>) -> Result<Self> {
        let n_r = rows.len();
        if n_r == 0 {
            return Err(Error::InvalidLength(
                "need at least one relay antenna".into(),
            ));
        }
        let n_d = rows[0].len();
        if n_d == 0 {
            return Err(Error::InvalidLength(
                "need at least one destination antenna".into(),
            ));
        }
        if rows.iter().any(|r| r.len() != n_d) {
            return Err(Error::InvalidLength(
                "every relay antenna must list every destination antenna".into(),
            ));
        }
        let m = rows[0][0].len();
        if m == 0 {
            return Err(Error::InvalidLength("need at least one tone".into()));
        }
        let per_pair: Vec<ToneResponse> = rows.into_iter().flatten().collect();
        if per_pair.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidLength(
                "every channel must cover the same number of tones".into(),
            ));
        }
        Ok(Self {
            per_pair,
            n_r,
            n_d,
            m,
        })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn num_tones(&self) -> usize {
        self.m
    }

    /// Gain on tone `l` from relay antenna `i` to destination antenna `j`.
    pub fn gain(&self, tone: usize, i: usize, j: usize) -> Complex64 {
        self.per_pair[i * self.n_d + j].gain(tone)
    }
}

/// The channel the destination equalizer actually sees once the relay
/// transmits with weights `alpha`: destination branch `j` on tone `l` carries
/// `sum_i alpha_i * g[l][i][j]`.
pub fn effective_channel_dest(
    g: &DestinationChannels,
    alpha: &Allocation,
    snr_hat: f64,
) -> Result<EffectiveChannel> {
    if alpha.len() != g.n_r() {
        return Err(Error::InvalidLength(format!(
            "{} weights for {} relay antennas",
            alpha.len(),
            g.n_r()
        )));
    }
    let tones = (0..g.num_tones())
        .map(|l| {
            (0..g.n_d())
                .map(|j| {
                    alpha
                        .weights()
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| a * g.gain(l, i, j))
                        .sum()
                })
                .collect()
        })
        .collect();
    EffectiveChannel::from_tones(tones, snr_hat)
}

/// Constraint multiplier implied by the current feed-forward weights:
/// `lambda = (1 / (M * snr_hat)) * sum_{l,j} |w[l][j]|^2`. At infinite snr
/// the multiplier is zero.
pub fn lambda_update(w: &FeedforwardTaps, snr_hat: f64) -> f64 {
    if snr_hat.is_finite() {
        w.energy() / (w.num_tones() as f64 * snr_hat)
    } else {
        0.0
    }
}

/// Per-tone coupling vectors between the relay weights and the destination
/// combiner: `c[l][i] = conj(sum_j w[l][j] * g[l][i][j])`, chosen so the
/// combined signal response factors as `T[l] = c[l]^H alpha`.
pub fn c_vectors(g: &DestinationChannels, w: &FeedforwardTaps) -> Vec<Vec<Complex64>> {
    assert_eq!(
        w.num_tones(),
        g.num_tones(),
        "weights must cover every tone"
    );
    assert_eq!(
        w.branches(),
        g.n_d(),
        "weights must cover every destination antenna"
    );
    (0..g.num_tones())
        .map(|l| {
            (0..g.n_r())
                .map(|i| {
                    (0..g.n_d())
                        .map(|j| w.tap(l, j) * g.gain(l, i, j))
                        .sum::<Complex64>()
                        .conj()
                })
                .collect()
        })
        .collect()
}

/// Solves the weight stationarity equation for fixed coupling vectors,
/// multiplier, and target response:
///
/// ```text
/// (M * lambda * I + sum_l c[l] c[l]^H) alpha = sum_l c[l] D[l]
/// ```
pub fn alpha_update(c: &[Vec<Complex64>], lambda: f64, fb: &FeedbackTaps) -> Result<Allocation> {
    let m = c.len();
    if m == 0 {
        return Err(Error::InvalidLength(
            "need at least one coupling vector".into(),
        ));
    }
    let n_r = c[0].len();
    if n_r == 0 || c.iter().any(|cl| cl.len() != n_r) {
        return Err(Error::InvalidLength(
            "every coupling vector must cover every relay antenna".into(),
        ));
    }
    assert!(
        lambda >= 0.0 && lambda.is_finite(),
        "multiplier must be non-negative and finite"
    );

    let ridge = Complex64::new(m as f64 * lambda, 0.0);
    let mut normal = DMatrix::identity(n_r, n_r) * ridge;
    let mut rhs = DVector::from_element(n_r, Complex64::new(0.0, 0.0));
    for (l, cl) in c.iter().enumerate() {
        let cv = DVector::from_column_slice(cl);
        let d = fb.combined_response(m, l);
        normal += &cv * cv.adjoint();
        rhs += cv * d;
    }
    match normal.clone().lu().solve(&rhs) {
        Some(sol) => Allocation::new(sol.iter().copied().collect()),
        None => {
            let sv = normal.svd(false, false).singular_values;
            let cond = if sv[n_r - 1] > 0.0 {
                sv[0] / sv[n_r - 1]
            } else {
                f64::INFINITY
            };
            Err(Error::SingularSystem { cond })
        }
    }
}

/// Knobs of the fixed-point iteration.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Largest per-weight (and per-tap) movement below which the iteration is
    /// declared converged.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Starting weights; the uniform split when absent. Must hold the unit
    /// budget within 1e-6.
    pub initial_alpha: Option<Allocation>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iterations: 500,
            initial_alpha: None,
        }
    }
}

impl SolverOptions {
    fn validate(&self, n_r: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "need at least one solver iteration".into(),
            ));
        }
        if let Some(start) = &self.initial_alpha {
            if start.len() != n_r {
                return Err(Error::InvalidLength(format!(
                    "starting point has {} weights for {} relay antennas",
                    start.len(),
                    n_r
                )));
            }
            if (start.total_power() - 1.0).abs() > INITIAL_BUDGET_TOL {
                return Err(Error::InvalidConfig(format!(
                    "starting point uses {} of the unit power budget",
                    start.total_power()
                )));
            }
        }
        Ok(())
    }
}

/// Where the fixed-point iteration stopped.
#[derive(Debug, Clone)]
pub struct KktState {
    /// The weights after the final update, rescaled onto the unit budget.
    pub alpha: Allocation,
    /// The multiplier read off the final equalizer design.
    pub lambda: f64,
    /// Feed-forward weights designed for the weights *entering* the final
    /// update (the pair the iteration hands from one step to the next).
    pub w: FeedforwardTaps,
    /// Feedback taps after the final update; empty without decision feedback.
    pub fb: FeedbackTaps,
    pub iterations: usize,
    pub converged: bool,
}

/// Optimizes the relay weights for a purely feed-forward destination
/// equalizer.
pub fn optimize_fde(
    g: &DestinationChannels,
    snr_hat: f64,
    opts: &SolverOptions,
) -> Result<KktState> {
    solve_kkt(g, snr_hat, &[], opts)
}

/// Optimizes the relay weights jointly with the destination's feedback
/// filter (taps at the given lags).
pub fn optimize_fde_dfe(
    g: &DestinationChannels,
    snr_hat: f64,
    indices: &[usize],
    opts: &SolverOptions,
) -> Result<KktState> {
    solve_kkt(g, snr_hat, indices, opts)
}

fn solve_kkt(
    g: &DestinationChannels,
    snr_hat: f64,
    indices: &[usize],
    opts: &SolverOptions,
) -> Result<KktState> {
    opts.validate(g.n_r())?;
    let m = g.num_tones();
    let mut alpha = match &opts.initial_alpha {
        Some(start) => start.clone(),
        None => equal_allocation(g.n_r())?,
    };
    let mut fb = FeedbackTaps::zeros(indices, m)?;
    let mut carried: Option<(FeedforwardTaps, f64)> = None;

    for iteration in 1..=opts.max_iterations {
        let ch = effective_channel_dest(g, &alpha, snr_hat)?;
        let w = ffe_taps(&ch, &fb);
        let lambda = lambda_update(&w, snr_hat);
        let fb_new = if indices.is_empty() {
            FeedbackTaps::empty()
        } else {
            feedback_update(&ch, &w, indices)
        };
        let c = c_vectors(g, &w);
        let alpha_new = alpha_update(&c, lambda, &fb_new)?;

        let alpha_moved = alpha.max_distance(&alpha_new);
        let fb_moved = fb.max_coeff_distance(&fb_new);
        alpha = alpha_new;
        fb = fb_new;
        if alpha_moved < opts.epsilon && fb_moved < opts.epsilon {
            return Ok(KktState {
                // A converged iterate sits within a small multiple of the
                // final step from the budget surface; return the feasible
                // representative so downstream power accounting is exact.
                alpha: alpha.scaled_to_unit_power(),
                lambda,
                w,
                fb,
                iterations: iteration,
                converged: true,
            });
        }
        carried = Some((w, lambda));
    }

    let (w, lambda) = carried.expect("at least one iteration ran");
    Err(Error::NonConvergence(Box::new(KktState {
        alpha: alpha.scaled_to_unit_power(),
        lambda,
        w,
        fb,
        iterations: opts.max_iterations,
        converged: false,
    })))
}

/// Best feedback taps for a fixed feed-forward design: project the combined
/// signal response onto the lag set,
/// `f_k = (1/M) * sum_l conj(T[l]) e^{-j 2 pi k l / M}`.
fn feedback_update(ch: &EffectiveChannel, w: &FeedforwardTaps, indices: &[usize]) -> FeedbackTaps {
    let m = ch.num_tones();
    let t: Vec<Complex64> = (0..m)
        .map(|l| {
            (0..ch.branches())
                .map(|j| w.tap(l, j) * ch.gain(l, j))
                .sum()
        })
        .collect();
    let coeffs = indices
        .iter()
        .map(|&k| {
            t.iter()
                .enumerate()
                .map(|(l, tl)| tl.conj() * twiddle(m, k * l))
                .sum::<Complex64>()
                / m as f64
        })
        .collect();
    FeedbackTaps::new(indices.to_vec(), coeffs, m).expect("lags were validated")
}

/// Worst first-order optimality violation of a claimed solution, measured
/// without the update formulas: central finite differences of the model MSE
/// (at unit signal power) over the real and imaginary parts of every weight,
/// combined with the budget violation and the multiplier sign:
///
/// ```text
/// max_i | d mse / d alpha_i + lambda * d (|alpha|^2 - 1) / d alpha_i |
/// ```
///
/// joined by `| sum |alpha|^2 - 1 |` and `max(0, -lambda)`. Small residuals
/// certify the solution; an equal split on a random channel typically fails
/// loudly.
pub fn kkt_residual(g: &DestinationChannels, state: &KktState, snr_hat: f64) -> f64 {
    let sigma_n2 = if snr_hat.is_finite() {
        1.0 / snr_hat
    } else {
        0.0
    };
    let cost = |alpha: &Allocation| -> f64 {
        let ch = effective_channel_dest(g, alpha, snr_hat)
            .expect("state and channels have matching dimensions");
        analytic_mse(&ch, &state.w, &state.fb, 1.0, sigma_n2)
    };

    let mut worst: f64 = 0.0;
    for i in 0..state.alpha.len() {
        for direction in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
            let mut plus = state.alpha.weights().to_vec();
            let mut minus = plus.clone();
            plus[i] += direction * RESIDUAL_STEP;
            minus[i] -= direction * RESIDUAL_STEP;
            let grad = (cost(&Allocation::new(plus).expect("finite"))
                - cost(&Allocation::new(minus).expect("finite")))
                / (2.0 * RESIDUAL_STEP);
            // d(|alpha_i|^2)/dx = 2x along the real axis, 2y along the imaginary.
            let weight = state.alpha.weights()[i];
            let budget_grad = 2.0
                * if direction.re != 0.0 {
                    weight.re
                } else {
                    weight.im
                };
            worst = worst.max((grad + state.lambda * budget_grad).abs());
        }
    }
    let budget_violation = (state.alpha.total_power() - 1.0).abs();
    worst.max(budget_violation).max((-state.lambda).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, PowerDelayProfile};
    use crate::mmse_fde::{feedback_system, solve_feedback};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_dest_channels<R: Rng>(
        m: usize,
        n_r: usize,
        n_d: usize,
        l_g: usize,
        rng: &mut R,
    ) -> DestinationChannels {
        let pdp = PowerDelayProfile::new(1.0, 2.0, l_g, 1.0).unwrap();
        let rows = (0..n_r)
            .map(|_| {
                (0..n_d)
                    .map(|_| draw_channel(&pdp, rng).freq_response(m).unwrap())
                    .collect()
            })
            .collect();
        DestinationChannels::new(rows).unwrap()
    }

    #[test]
    fn equal_allocation_splits_the_unit_budget() {
        let alloc = equal_allocation(4).unwrap();
        for a in alloc.weights() {
            assert!((a.norm_sqr() - 0.25).abs() < 1e-15);
        }
        assert!((alloc.total_power() - 1.0).abs() < 1e-15);
        assert!(equal_allocation(0).is_err());
    }

    #[test]
    fn effective_channel_mixes_antennas_by_weight() {
        // Two relay antennas, one destination antenna, one tone.
        let g = DestinationChannels::new(vec![
            vec![ToneResponse::new(vec![c(1.0, 0.0)])],
            vec![ToneResponse::new(vec![c(0.0, 1.0)])],
        ])
        .unwrap();
        let alpha = Allocation::new(vec![c(0.6, 0.0), c(0.8, 0.0)]).unwrap();
        let ch = effective_channel_dest(&g, &alpha, 10.0).unwrap();
        assert!((ch.gain(0, 0) - c(0.6, 0.8)).norm() < 1e-15);
        assert_eq!(ch.branches(), 1);
        assert_eq!(ch.num_tones(), 1);
    }

    #[test]
    fn selecting_one_antenna_reproduces_its_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let g = random_dest_channels(16, 2, 2, 3, &mut rng);
        let alpha = Allocation::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let ch = effective_channel_dest(&g, &alpha, 5.0).unwrap();
        for l in 0..16 {
            for j in 0..2 {
                assert!((ch.gain(l, j) - g.gain(l, 1, j)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn multiplier_is_scaled_feedforward_energy() {
        let w = FeedforwardTaps::from_tones(vec![vec![c(1.0, 0.0), c(0.0, 1.0)]; 4]).unwrap();
        // Energy 8 over 4 tones at snr 2: lambda = 8 / (4 * 2) = 1.
        assert!((lambda_update(&w, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(lambda_update(&w, f64::INFINITY), 0.0);
    }

    #[test]
    fn coupling_vectors_factor_the_combined_response() {
        // T[l] computed through the effective channel must equal c[l]^H alpha.
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let g = random_dest_channels(8, 3, 2, 3, &mut rng);
        let alpha = Allocation::new(vec![c(0.5, 0.2), c(-0.3, 0.4), c(0.1, -0.6)]).unwrap();
        let ch = effective_channel_dest(&g, &alpha, 7.0).unwrap();
        let w = ffe_taps(&ch, &FeedbackTaps::empty());
        let c_ls = c_vectors(&g, &w);
        for (l, c_l) in c_ls.iter().enumerate() {
            let direct: Complex64 = (0..2).map(|j| w.tap(l, j) * ch.gain(l, j)).sum();
            let factored: Complex64 = c_l
                .iter()
                .zip(alpha.weights())
                .map(|(cv, a)| cv.conj() * a)
                .sum();
            assert!(
                (direct - factored).norm() < 1e-12,
                "tone {l}: {direct} vs {factored}"
            );
        }
    }

    #[test]
    fn alpha_update_minimizes_the_ridge_cost() {
        // The update must sit at the minimum of
        //   psi(a) = (1/M) sum_l |c[l]^H a - D[l]|^2 + lambda * |a|^2,
        // checked by random perturbations in every direction.
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let m = 16;
        let n_r = 3;
        let c_ls: Vec<Vec<Complex64>> = (0..m)
            .map(|_| {
                (0..n_r)
                    .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                    .collect()
            })
            .collect();
        let lambda = 0.37;
        let fb = FeedbackTaps::new(vec![1], vec![c(0.2, -0.1)], m).unwrap();
        let alpha = alpha_update(&c_ls, lambda, &fb).unwrap();

        let psi = |a: &[Complex64]| -> f64 {
            let mut acc = 0.0;
            for (l, cl) in c_ls.iter().enumerate() {
                let t: Complex64 = cl.iter().zip(a).map(|(cv, ai)| cv.conj() * ai).sum();
                acc += (t - fb.combined_response(m, l)).norm_sqr();
            }
            acc / m as f64 + lambda * a.iter().map(|ai| ai.norm_sqr()).sum::<f64>()
        };
        let base = psi(alpha.weights());
        for _ in 0..50 {
            let mut perturbed = alpha.weights().to_vec();
            let i = rng.random_range(0..n_r);
            perturbed[i] += c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 1e-4;
            assert!(psi(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn fixed_point_lands_on_the_unit_budget() {
        // The raw update never enforces the budget explicitly, so an
        // unprojected iterate drifting onto it is evidence of an actual
        // stationary point. Run the update loop by hand to observe the
        // iterate before the solver's final rescale.
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let snr_hat = 10.0;
        let mut alpha = equal_allocation(2).unwrap();
        let mut lambda = 0.0;
        // The distance to the fixed point is a small multiple of the final
        // step, so hitting the budget to 1e-8 needs a tolerance well below it.
        for _ in 0..2000 {
            let ch = effective_channel_dest(&g, &alpha, snr_hat).unwrap();
            let w = ffe_taps(&ch, &FeedbackTaps::empty());
            lambda = lambda_update(&w, snr_hat);
            let c = c_vectors(&g, &w);
            let next = alpha_update(&c, lambda, &FeedbackTaps::empty()).unwrap();
            let moved = alpha.max_distance(&next);
            alpha = next;
            if moved < 1e-10 {
                break;
            }
        }
        assert!(
            (alpha.total_power() - 1.0).abs() < 1e-8,
            "budget off by {}",
            (alpha.total_power() - 1.0).abs()
        );
        assert!(lambda > 0.0);

        // The solver returns that pattern snapped exactly onto the budget.
        let opts = SolverOptions {
            epsilon: 1e-10,
            max_iterations: 2000,
            initial_alpha: None,
        };
        let state = optimize_fde(&g, snr_hat, &opts).unwrap();
        assert!(state.converged);
        assert!((state.alpha.total_power() - 1.0).abs() < 1e-14);
        assert!(state.alpha.max_distance(&alpha) < 1e-8);
    }

    #[test]
    fn certifier_accepts_the_solver_and_rejects_the_equal_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let snr_hat = 10.0;
        let opts = SolverOptions {
            epsilon: 1e-9,
            max_iterations: 2000,
            initial_alpha: None,
        };
        let state = optimize_fde(&g, snr_hat, &opts).unwrap();
        let residual = kkt_residual(&g, &state, snr_hat);
        assert!(residual < 1e-4, "residual {residual}");

        // Swap the optimal weights for the uniform split, keeping the rest of
        // the state: the certifier must flag it.
        let mut equal_state = state.clone();
        let equal = equal_allocation(2).unwrap();
        let ch = effective_channel_dest(&g, &equal, snr_hat).unwrap();
        equal_state.alpha = equal;
        equal_state.w = ffe_taps(&ch, &FeedbackTaps::empty());
        equal_state.lambda = lambda_update(&equal_state.w, snr_hat);
        let equal_residual = kkt_residual(&g, &equal_state, snr_hat);
        assert!(
            equal_residual > 1e-2,
            "equal split looked stationary: {equal_residual}"
        );
    }

    #[test]
    fn optimized_weights_beat_the_equal_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let snr_hat = 10.0;
        for _ in 0..5 {
            let g = random_dest_channels(32, 2, 2, 3, &mut rng);
            let opts = SolverOptions {
                epsilon: 1e-8,
                max_iterations: 2000,
                initial_alpha: None,
            };
            let state = optimize_fde(&g, snr_hat, &opts).unwrap();
            let opt_ch = effective_channel_dest(&g, &state.alpha, snr_hat).unwrap();
            let opt_mse = analytic_mse(
                &opt_ch,
                &ffe_taps(&opt_ch, &FeedbackTaps::empty()),
                &FeedbackTaps::empty(),
                1.0,
                1.0 / snr_hat,
            );

            let equal = equal_allocation(2).unwrap();
            let eq_ch = effective_channel_dest(&g, &equal, snr_hat).unwrap();
            let eq_mse = analytic_mse(
                &eq_ch,
                &ffe_taps(&eq_ch, &FeedbackTaps::empty()),
                &FeedbackTaps::empty(),
                1.0,
                1.0 / snr_hat,
            );
            assert!(
                opt_mse <= eq_mse + 1e-9,
                "optimized {opt_mse} worse than equal {eq_mse}"
            );
        }
    }

    #[test]
    fn empty_lag_set_reduces_to_the_feedforward_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = random_dest_channels(16, 2, 2, 3, &mut rng);
        let opts = SolverOptions::default();
        let plain = optimize_fde(&g, 8.0, &opts).unwrap();
        let via_dfe = optimize_fde_dfe(&g, 8.0, &[], &opts).unwrap();
        assert_eq!(plain.alpha, via_dfe.alpha);
        assert_eq!(plain.w, via_dfe.w);
        assert_eq!(plain.iterations, via_dfe.iterations);
        assert!(via_dfe.fb.is_empty());
    }

    #[test]
    fn joint_fixed_point_agrees_with_the_standalone_feedback_design() {
        // At convergence, the taps the iteration carries must match the taps
        // designed from scratch for the final effective channel.
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let snr_hat = 10.0;
        let indices = FeedbackTaps::consecutive_indices(2);
        let opts = SolverOptions {
            epsilon: 1e-10,
            max_iterations: 5000,
            initial_alpha: None,
        };
        let state = optimize_fde_dfe(&g, snr_hat, &indices, &opts).unwrap();
        let ch = effective_channel_dest(&g, &state.alpha, snr_hat).unwrap();
        let standalone = solve_feedback(&feedback_system(&ch, &indices).unwrap()).unwrap();
        let distance = state.fb.max_coeff_distance(&standalone);
        assert!(distance < 1e-5, "taps {distance} apart");
    }

    #[test]
    fn flat_channels_design_no_feedback() {
        // Single-tap second-hop channels are flat, so the jointly optimized
        // feedback taps must vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let pdp = PowerDelayProfile::new(1.0, 2.0, 1, 1.0).unwrap();
        let rows = (0..2)
            .map(|_| {
                (0..2)
                    .map(|_| draw_channel(&pdp, &mut rng).freq_response(16).unwrap())
                    .collect()
            })
            .collect();
        let g = DestinationChannels::new(rows).unwrap();
        let opts = SolverOptions {
            epsilon: 1e-9,
            max_iterations: 2000,
            initial_alpha: None,
        };
        let state = optimize_fde_dfe(&g, 10.0, &[1, 2], &opts).unwrap();
        for f in state.fb.coeffs() {
            assert!(f.norm() < 1e-6, "leftover tap {f}");
        }
    }

    #[test]
    fn rotated_solutions_cost_the_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let snr_hat = 10.0;
        let opts = SolverOptions {
            epsilon: 1e-9,
            max_iterations: 2000,
            initial_alpha: None,
        };
        let state = optimize_fde(&g, snr_hat, &opts).unwrap();
        let base_ch = effective_channel_dest(&g, &state.alpha, snr_hat).unwrap();
        let base_mse = analytic_mse(
            &base_ch,
            &ffe_taps(&base_ch, &FeedbackTaps::empty()),
            &FeedbackTaps::empty(),
            1.0,
            1.0 / snr_hat,
        );
        for &phase in &[0.3, 1.7, -2.4] {
            let rotated = state.alpha.rotated(phase);
            let ch = effective_channel_dest(&g, &rotated, snr_hat).unwrap();
            let mse = analytic_mse(
                &ch,
                &ffe_taps(&ch, &FeedbackTaps::empty()),
                &FeedbackTaps::empty(),
                1.0,
                1.0 / snr_hat,
            );
            assert!(
                (mse - base_mse).abs() < 1e-10,
                "phase {phase}: {mse} vs {base_mse}"
            );
        }
    }

    #[test]
    fn iteration_budget_of_one_reports_nonconvergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let opts = SolverOptions {
            epsilon: 1e-12,
            max_iterations: 1,
            initial_alpha: None,
        };
        match optimize_fde(&g, 10.0, &opts) {
            Err(Error::NonConvergence(state)) => {
                assert_eq!(state.iterations, 1);
                assert!(!state.converged);
                assert_eq!(state.alpha.len(), 2);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn solver_runs_are_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let g = random_dest_channels(32, 2, 2, 3, &mut rng);
        let opts = SolverOptions::default();
        let a = optimize_fde(&g, 10.0, &opts).unwrap();
        let b = optimize_fde(&g, 10.0, &opts).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.w, b.w);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn bad_starting_points_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let g = random_dest_channels(16, 2, 2, 3, &mut rng);
        let wrong_len = SolverOptions {
            initial_alpha: Some(Allocation::new(vec![c(1.0, 0.0)]).unwrap()),
            ..SolverOptions::default()
        };
        assert!(optimize_fde(&g, 10.0, &wrong_len).is_err());
        let off_budget = SolverOptions {
            initial_alpha: Some(Allocation::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap()),
            ..SolverOptions::default()
        };
        assert!(optimize_fde(&g, 10.0, &off_budget).is_err());
    }

    #[test]
    fn channel_bank_shape_is_validated() {
        assert!(DestinationChannels::new(vec![]).is_err());
        assert!(DestinationChannels::new(vec![vec![]]).is_err());
        // Ragged tone counts.
        assert!(DestinationChannels::new(vec![
            vec![ToneResponse::new(vec![c(1.0, 0.0); 4])],
            vec![ToneResponse::new(vec![c(1.0, 0.0); 8])],
        ])
        .is_err());
        // Ragged antenna counts.
        assert!(DestinationChannels::new(vec![
            vec![
                ToneResponse::new(vec![c(1.0, 0.0); 4]),
                ToneResponse::new(vec![c(1.0, 0.0); 4]),
            ],
            vec![ToneResponse::new(vec![c(1.0, 0.0); 4])],
        ])
        .is_err());
    }
}
