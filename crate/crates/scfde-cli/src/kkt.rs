//! Certification of the relay power-allocation solver.
//!
//! Draws random second-hop channels, runs both solver variants (with and
//! without a feedback filter at the destination), and checks on every draw
//! that the returned point actually satisfies the first-order optimality
//! conditions: a small finite-difference residual, the unit power budget,
//! and invariance of the designed cost under a common phase rotation of the
//! weights. Exits 0 only when every criterion holds.

use clap::Args;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use scfde::channel::{draw_channel, PowerDelayProfile};
use scfde::link_sim::SimConfig;
use scfde::mmse_fde::{analytic_mse, feedback_system, ffe_taps, solve_feedback, FeedbackTaps};
use scfde::power_alloc::{
    effective_channel_dest, kkt_residual, optimize_fde, optimize_fde_dfe, Allocation,
    DestinationChannels, SolverOptions,
};

use crate::{build_pool, config, map_run_error, write_output, CliError, RunArgs};

/// Largest allowed deviation of a converged point's relay power from the
/// unit budget.
const BUDGET_TOL: f64 = 1e-8;
/// Largest allowed change of the designed cost when every weight is rotated
/// by a common phase (the cost must not depend on that phase).
const PHASE_TOL: f64 = 1e-10;
/// Phase used for the rotation probe, in radians.
const PHASE_PROBE: f64 = 0.7;
/// Smallest acceptable fraction of draws on which the solver converges.
const MIN_CONVERGED_FRACTION: f64 = 0.95;

#[derive(Args)]
pub struct KktArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Largest first-order residual accepted on a converged draw
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Solver tolerance for certification. Deliberately independent of the
    /// configuration's `epsilon`: the first-order residual at the returned
    /// point scales with the final step, so clearing the default threshold
    /// with margin needs a much tighter stop than a BER sweep does.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Iteration budget for certification, independent of the
    /// configuration's `max_iterations`.
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

/// What one solver variant produced on one channel draw.
struct SolveReport {
    converged: bool,
    iterations: usize,
    residual: f64,
    budget_error: f64,
    phase_delta: f64,
}

struct DrawReport {
    index: usize,
    fde: SolveReport,
    dfe: SolveReport,
}

pub fn run(args: &KktArgs) -> Result<(), CliError> {
    let cfg = config::load(&args.run)?;
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !(args.threshold >= 0.0 && args.threshold.is_finite()) {
        return Err(CliError::Config(format!(
            "threshold must be non-negative and finite, got {}",
            args.threshold
        )));
    }
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::Config(format!(
            "epsilon must be positive and finite, got {}",
            args.epsilon
        )));
    }
    if args.max_iterations == 0 {
        return Err(CliError::Config(
            "need at least one solver iteration".into(),
        ));
    }

    // Certify at the first grid point; the stationarity conditions have the
    // same structure at every SNR.
    let snr_db = cfg.snr_db_grid[0];
    let snr_hat = cfg.p_r / cfg.p_s * 10f64.powf(snr_db / 10.0);
    let opts = SolverOptions {
        epsilon: args.epsilon,
        max_iterations: args.max_iterations,
        initial_alpha: None,
    };
    let lags: Vec<usize> = (1..=cfg.b_g()).collect();

    let pool = build_pool(args.run.threads)?;
    let draws: Vec<DrawReport> = pool
        .install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|index| certify_draw(&cfg, index, snr_hat, &lags, &opts))
                .collect::<Result<Vec<_>, scfde::Error>>()
        })
        .map_err(map_run_error)?;

    let mut text = format!(
        "kkt-check: {} draws, n_r={} n_d={} m={} l_g={} sigma_t={} snr_hat={:.3} \
         epsilon={:.1e} threshold={:.1e}\n",
        cfg.trials,
        cfg.n_r,
        cfg.n_d,
        cfg.m,
        cfg.l_g,
        cfg.sigma_t,
        snr_hat,
        args.epsilon,
        args.threshold,
    );
    for draw in &draws {
        text.push_str(&format!(
            "draw {:3}  fde: {}  fde-dfe: {}\n",
            draw.index,
            describe(&draw.fde),
            describe(&draw.dfe)
        ));
    }

    let mut failures = Vec::new();
    let variants: [(&str, Vec<&SolveReport>); 2] = [
        ("fde", draws.iter().map(|d| &d.fde).collect()),
        ("fde-dfe", draws.iter().map(|d| &d.dfe).collect()),
    ];
    for (name, reports) in &variants {
        let converged: Vec<&&SolveReport> = reports.iter().filter(|r| r.converged).collect();
        let fraction = converged.len() as f64 / reports.len() as f64;
        let max_residual = fold_max(converged.iter().map(|r| r.residual));
        let max_budget = fold_max(converged.iter().map(|r| r.budget_error));
        let max_phase = fold_max(converged.iter().map(|r| r.phase_delta));
        text.push_str(&format!(
            "{name}: converged {}/{} worst residual={:.2e} budget={:.2e} phase={:.2e}\n",
            converged.len(),
            reports.len(),
            max_residual,
            max_budget,
            max_phase
        ));
        if fraction < MIN_CONVERGED_FRACTION {
            failures.push(format!(
                "{name}: only {}/{} draws converged",
                converged.len(),
                reports.len()
            ));
        }
        if max_residual > args.threshold {
            failures.push(format!(
                "{name}: residual {max_residual:.2e} exceeds {:.2e}",
                args.threshold
            ));
        }
        if max_budget > BUDGET_TOL {
            failures.push(format!(
                "{name}: budget error {max_budget:.2e} exceeds {BUDGET_TOL:.2e}"
            ));
        }
        if max_phase > PHASE_TOL {
            failures.push(format!(
                "{name}: phase sensitivity {max_phase:.2e} exceeds {PHASE_TOL:.2e}"
            ));
        }
    }

    let verdict_ok = failures.is_empty();
    text.push_str(if verdict_ok { "PASS\n" } else { "FAIL\n" });
    write_output(args.run.out.as_deref(), &text)?;
    if verdict_ok {
        Ok(())
    } else {
        Err(CliError::Failed(failures.join("; ")))
    }
}

fn describe(report: &SolveReport) -> String {
    if report.converged {
        format!(
            "iters={:<3} residual={:.2e} budget={:.2e} phase={:.2e}",
            report.iterations, report.residual, report.budget_error, report.phase_delta
        )
    } else {
        format!("NOT CONVERGED after {} iterations", report.iterations)
    }
}

fn fold_max(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

/// One reproducible channel draw, certified under both solver variants.
fn certify_draw(
    cfg: &SimConfig,
    index: usize,
    snr_hat: f64,
    lags: &[usize],
    opts: &SolverOptions,
) -> Result<DrawReport, scfde::Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
    rng.set_stream(index as u64);
    let pdp = PowerDelayProfile::new(1.0, cfg.sigma_t, cfg.l_g, 1.0)?;
    let g = DestinationChannels::new(
        (0..cfg.n_r)
            .map(|_| {
                (0..cfg.n_d)
                    .map(|_| draw_channel(&pdp, &mut rng).freq_response(cfg.m))
                    .collect()
            })
            .collect::<scfde::Result<Vec<_>>>()?,
    )?;

    let fde = certify_solve(&g, snr_hat, &[], opts)?;
    let dfe = certify_solve(&g, snr_hat, lags, opts)?;
    Ok(DrawReport { index, fde, dfe })
}

fn certify_solve(
    g: &DestinationChannels,
    snr_hat: f64,
    lags: &[usize],
    opts: &SolverOptions,
) -> Result<SolveReport, scfde::Error> {
    let outcome = if lags.is_empty() {
        optimize_fde(g, snr_hat, opts)
    } else {
        optimize_fde_dfe(g, snr_hat, lags, opts)
    };
    let state = match outcome {
        Ok(state) => state,
        Err(scfde::Error::NonConvergence(state)) => *state,
        Err(other) => return Err(other),
    };
    let residual = kkt_residual(g, &state, snr_hat);
    let budget_error = (state.alpha.total_power() - 1.0).abs();
    let base = designed_cost(g, &state.alpha, snr_hat, lags)?;
    let rotated = designed_cost(g, &state.alpha.rotated(PHASE_PROBE), snr_hat, lags)?;
    Ok(SolveReport {
        converged: state.converged,
        iterations: state.iterations,
        residual,
        budget_error,
        phase_delta: (base - rotated).abs(),
    })
}

/// Cost of the equalizer freshly designed for the given weights — the
/// objective the solver minimizes, evaluated from scratch.
pub(crate) fn designed_cost(
    g: &DestinationChannels,
    alpha: &Allocation,
    snr_hat: f64,
    lags: &[usize],
) -> Result<f64, scfde::Error> {
    let ch = effective_channel_dest(g, alpha, snr_hat)?;
    let fb = if lags.is_empty() {
        FeedbackTaps::empty()
    } else {
        solve_feedback(&feedback_system(&ch, lags)?)?
    };
    let w = ffe_taps(&ch, &fb);
    Ok(analytic_mse(&ch, &w, &fb, 1.0, 1.0 / snr_hat))
}
