//! Fast internal consistency checks, each named after the property it
//! verifies. The `--corrupt-dft` flag mis-scales the forward transform on
//! purpose, proving that the transform checks can actually fail.

use clap::Args;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scfde::channel::{draw_channel, transmit_over_channel, ChannelTaps, PowerDelayProfile};
use scfde::link_sim::{run_trial, SimConfig};
use scfde::mmse_fde::{
    analytic_mse, equalize, feedback_system, ffe_taps, ffe_taps_by_solve, solve_feedback,
    EffectiveChannel, FeedbackMode, FeedbackTaps,
};
use scfde::modem::{decide_sample, demodulate, modulate, BitBlock};
use scfde::power_alloc::{
    equal_allocation, kkt_residual, optimize_fde, optimize_fde_dfe, DestinationChannels,
    SolverOptions,
};
use scfde::spectral::{circular_convolve, dft, idft, Spectrum, TimeBlock};

use crate::{kkt::designed_cost, write_output, CliError};

#[derive(Args)]
pub struct SelftestArgs {
    /// Deliberately mis-scale the forward transform so the transform checks
    /// fail; used to verify the selftest can detect a broken build
    #[arg(long)]
    corrupt_dft: bool,
}

type Dft = fn(&TimeBlock) -> scfde::Result<Spectrum>;
type Check = fn(&Ctx) -> Result<(), String>;

/// Shared context; checks that exercise the transform take it from here so
/// the corruption hook reaches them.
struct Ctx {
    dft: Dft,
}

fn corrupted_dft(block: &TimeBlock) -> scfde::Result<Spectrum> {
    let spec = dft(block)?;
    let scale = 1.0 / (block.len() as f64).sqrt();
    Ok(Spectrum::new(
        spec.bins().iter().map(|&b| b * scale).collect(),
    ))
}

pub fn run(args: &SelftestArgs) -> Result<(), CliError> {
    let ctx = Ctx {
        dft: if args.corrupt_dft { corrupted_dft } else { dft },
    };
    let checks: &[(&str, Check)] = &[
        ("spectral.round-trip", check_round_trip),
        ("spectral.parseval", check_parseval),
        ("spectral.convolution-theorem", check_convolution_theorem),
        ("modem.gray-round-trip", check_modem_round_trip),
        ("channel.prefix-circularity", check_prefix_circularity),
        ("channel.tone-model", check_tone_model),
        ("channel.tap-statistics", check_tap_statistics),
        ("equalizer.closed-form-vs-solve", check_closed_form_vs_solve),
        ("equalizer.hand-example", check_hand_example),
        ("equalizer.stationarity", check_stationarity),
        ("equalizer.mse-model", check_mse_model),
        ("alloc.fixed-point", check_fixed_point),
        ("alloc.beats-equal-split", check_beats_equal_split),
        ("link.noiseless", check_noiseless_link),
        ("link.deep-noise", check_deep_noise),
    ];

    let mut text = String::new();
    let mut failures = 0usize;
    for (name, check) in checks {
        match check(&ctx) {
            Ok(()) => text.push_str(&format!("ok   {name}\n")),
            Err(reason) => {
                failures += 1;
                text.push_str(&format!("FAIL {name}: {reason}\n"));
            }
        }
    }
    text.push_str(&format!(
        "{} of {} checks passed\n",
        checks.len() - failures,
        checks.len()
    ));
    write_output(None, &text)?;
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{failures} of {} checks failed",
            checks.len()
        )))
    }
}

fn random_block(len: usize, rng: &mut ChaCha8Rng) -> TimeBlock {
    TimeBlock::new(
        (0..len)
            .map(|_| {
                Complex64::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                )
            })
            .collect(),
    )
}

fn max_sample_distance(a: &TimeBlock, b: &TimeBlock) -> f64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn check_round_trip(ctx: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in [2usize, 8, 64, 512] {
        let x = random_block(m, &mut rng);
        let back = idft(&(ctx.dft)(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let err = max_sample_distance(&x, &back);
        if err > 1e-10 {
            return Err(format!("round trip off by {err:.2e} at length {m}"));
        }
    }
    Ok(())
}

fn check_parseval(ctx: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in [4usize, 32, 256] {
        let x = random_block(m, &mut rng);
        let time = x.energy();
        let freq = (ctx.dft)(&x).map_err(|e| e.to_string())?.energy() / m as f64;
        if (time - freq).abs() > 1e-10 * time.max(1.0) {
            return Err(format!(
                "time energy {time:.12} vs scaled tone energy {freq:.12} at length {m}"
            ));
        }
    }
    Ok(())
}

fn check_convolution_theorem(ctx: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = 16;
    let a = random_block(m, &mut rng);
    let b = random_block(m, &mut rng);
    let direct = circular_convolve(&a, &b).map_err(|e| e.to_string())?;
    let fa = (ctx.dft)(&a).map_err(|e| e.to_string())?;
    let fb = (ctx.dft)(&b).map_err(|e| e.to_string())?;
    let product = Spectrum::new(
        fa.bins()
            .iter()
            .zip(fb.bins())
            .map(|(x, y)| x * y)
            .collect(),
    );
    let via_tones = idft(&product).map_err(|e| e.to_string())?;
    let err = max_sample_distance(&direct, &via_tones);
    if err > 1e-10 {
        return Err(format!(
            "direct and tone-product convolutions differ by {err:.2e}"
        ));
    }
    Ok(())
}

fn check_modem_round_trip(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bits = BitBlock::random(512, &mut rng);
    let symbols = modulate(&bits, 2.0).map_err(|e| e.to_string())?;
    let back = demodulate(&symbols).map_err(|e| e.to_string())?;
    if bits.count_differences(&back) != 0 {
        return Err("bits do not survive modulate/demodulate".into());
    }
    let decided = decide_sample(Complex64::new(0.3, -0.9), 2.0);
    if (decided - Complex64::new(1.0, -1.0)).norm() > 1e-12 {
        return Err(format!("decision on (0.3, -0.9) gave {decided}"));
    }
    Ok(())
}

fn check_prefix_circularity(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 32;
    let x = random_block(m, &mut rng);
    let pdp = PowerDelayProfile::new(1.0, 2.0, 5, 1.0).map_err(|e| e.to_string())?;
    let taps = draw_channel(&pdp, &mut rng);
    let rx = transmit_over_channel(&x, &taps, 8, 0.0, &mut rng).map_err(|e| e.to_string())?;
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    padded[..taps.len()].copy_from_slice(taps.taps());
    let circ = circular_convolve(&x, &TimeBlock::new(padded)).map_err(|e| e.to_string())?;
    let err = max_sample_distance(&rx, &circ);
    if err > 1e-10 {
        return Err(format!(
            "prefixed transmission differs from circular convolution by {err:.2e}"
        ));
    }
    Ok(())
}

fn check_tone_model(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = 32;
    let x = random_block(m, &mut rng);
    let pdp = PowerDelayProfile::new(1.0, 2.0, 4, 1.0).map_err(|e| e.to_string())?;
    let taps = draw_channel(&pdp, &mut rng);
    let rx = transmit_over_channel(&x, &taps, 6, 0.0, &mut rng).map_err(|e| e.to_string())?;
    let rx_tones = dft(&rx).map_err(|e| e.to_string())?;
    let tx_tones = dft(&x).map_err(|e| e.to_string())?;
    let response = taps.freq_response(m).map_err(|e| e.to_string())?;
    for l in 0..m {
        let expected = response.gain(l) * tx_tones.bins()[l];
        let err = (rx_tones.bins()[l] - expected).norm();
        if err > 1e-8 {
            return Err(format!("tone {l} off by {err:.2e}"));
        }
    }
    Ok(())
}

fn check_tap_statistics(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pdp = PowerDelayProfile::new(1.0, 2.0, 3, 1.0).map_err(|e| e.to_string())?;
    let draws = 30_000;
    let mut power = [0.0f64; 3];
    for _ in 0..draws {
        let taps = draw_channel(&pdp, &mut rng);
        for (l, tap) in taps.taps().iter().enumerate() {
            power[l] += tap.norm_sqr();
        }
    }
    for (l, total) in power.iter().enumerate() {
        let mean = total / draws as f64;
        let expected = pdp.tap_power(l).map_err(|e| e.to_string())?;
        let rel = (mean - expected).abs() / expected;
        if rel > 0.03 {
            return Err(format!(
                "tap {l}: mean power {mean:.4} vs profile {expected:.4} ({rel:.1e} relative)"
            ));
        }
    }
    Ok(())
}

fn random_channel(
    m: usize,
    branches: usize,
    snr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EffectiveChannel, String> {
    let tones = (0..m)
        .map(|_| {
            (0..branches)
                .map(|_| {
                    Complex64::new(
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                    )
                })
                .collect()
        })
        .collect();
    EffectiveChannel::from_tones(tones, snr).map_err(|e| e.to_string())
}

fn check_closed_form_vs_solve(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..200 {
        let m = [4usize, 8, 16, 32][case % 4];
        let branches = 1 + case % 3;
        let snr = 0.5 + rng.random::<f64>() * 50.0;
        let ch = random_channel(m, branches, snr, &mut rng)?;
        let b = case % 4;
        let fb = if b == 0 {
            FeedbackTaps::empty()
        } else {
            let coeffs = (0..b)
                .map(|_| {
                    Complex64::new(
                        rng.random::<f64>() * 0.4 - 0.2,
                        rng.random::<f64>() * 0.4 - 0.2,
                    )
                })
                .collect();
            FeedbackTaps::new(FeedbackTaps::consecutive_indices(b), coeffs, m)
                .map_err(|e| e.to_string())?
        };
        let closed = ffe_taps(&ch, &fb);
        let solved = ffe_taps_by_solve(&ch, &fb);
        for l in 0..m {
            for n in 0..branches {
                let err = (closed.tap(l, n) - solved.tap(l, n)).norm();
                if err > 1e-10 {
                    return Err(format!(
                        "case {case}: closed form and dense solve differ by {err:.2e}"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_hand_example(_: &Ctx) -> Result<(), String> {
    // Two tones, single branch, unit gain on tone 0 and a null on tone 1 at
    // unit snr: the noise-shaping weights are (1/2, 1), their transform pair
    // is (3/4, -1/4), and the one-tap feedback solves to 1/3.
    let ch = EffectiveChannel::from_tones(
        vec![
            vec![Complex64::new(1.0, 0.0)],
            vec![Complex64::new(0.0, 0.0)],
        ],
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let system = feedback_system(&ch, &[1]).map_err(|e| e.to_string())?;
    let fb = solve_feedback(&system).map_err(|e| e.to_string())?;
    let tap = fb.coeffs()[0];
    if (tap - Complex64::new(1.0 / 3.0, 0.0)).norm() > 1e-12 {
        return Err(format!("one-tap design gave {tap} instead of 1/3"));
    }
    Ok(())
}

fn check_stationarity(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (m, branches, snr) = (16, 2, 8.0);
    let ch = random_channel(m, branches, snr, &mut rng)?;
    let fb = solve_feedback(&feedback_system(&ch, &[1, 2]).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let w = ffe_taps(&ch, &fb);
    let base = analytic_mse(&ch, &w, &fb, 1.0, 1.0 / snr);
    let deltas = [
        Complex64::new(1e-3, 0.0),
        Complex64::new(-1e-3, 0.0),
        Complex64::new(0.0, 1e-3),
        Complex64::new(0.0, -1e-3),
    ];
    for probe in 0..20 {
        let tone = (probe * 7) % m;
        let branch = probe % branches;
        let mut perturbed = w.clone();
        perturbed.set_tap(tone, branch, w.tap(tone, branch) + deltas[probe % 4]);
        let cost = analytic_mse(&ch, &perturbed, &fb, 1.0, 1.0 / snr);
        if cost < base - 1e-12 {
            return Err(format!(
                "perturbing tone {tone} branch {branch} lowered the cost by {:.2e}",
                base - cost
            ));
        }
    }
    Ok(())
}

fn check_mse_model(_: &Ctx) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (m, branches, l_taps, l_cp) = (16usize, 2usize, 4usize, 3usize);
    let noise_var = 0.25;
    let snr = 1.0 / noise_var;
    let pdp = PowerDelayProfile::new(1.0, 2.0, l_taps, 1.0).map_err(|e| e.to_string())?;
    let taps: Vec<ChannelTaps> = (0..branches)
        .map(|_| draw_channel(&pdp, &mut rng))
        .collect();
    let responses = taps
        .iter()
        .map(|t| t.freq_response(m))
        .collect::<scfde::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let ch = EffectiveChannel::from_branch_responses(&responses, snr).map_err(|e| e.to_string())?;
    let fb = solve_feedback(&feedback_system(&ch, &[1, 2]).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let w = ffe_taps(&ch, &fb);
    let predicted = analytic_mse(&ch, &w, &fb, 1.0, noise_var);

    let blocks = 1500;
    let mut samples = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let bits = BitBlock::random(2 * m, &mut rng);
        let tx = modulate(&bits, 1.0).map_err(|e| e.to_string())?;
        let spectra = taps
            .iter()
            .map(|t| {
                let rx = transmit_over_channel(tx.symbols(), t, l_cp, noise_var, &mut rng)?;
                dft(&rx)
            })
            .collect::<scfde::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let out = equalize(&spectra, &w, &fb, 1.0, FeedbackMode::Genie(&tx))
            .map_err(|e| e.to_string())?;
        let block_mse = out
            .soft()
            .samples()
            .iter()
            .zip(tx.symbols().samples())
            .map(|(y, s)| (y - s).norm_sqr())
            .sum::<f64>()
            / m as f64;
        samples.push(block_mse);
    }
    let mean = samples.iter().sum::<f64>() / blocks as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (blocks - 1) as f64;
    let se = (var / blocks as f64).sqrt();
    let err = (mean - predicted).abs();
    if err > 4.0 * se + 1e-12 {
        return Err(format!(
            "simulated mse {mean:.6} vs predicted {predicted:.6} ({err:.2e} apart, se {se:.2e})"
        ));
    }
    Ok(())
}

fn draw_destination_channels(
    seed: u64,
    n_r: usize,
    n_d: usize,
    m: usize,
) -> Result<DestinationChannels, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pdp = PowerDelayProfile::new(1.0, 2.0, 3, 1.0).map_err(|e| e.to_string())?;
    DestinationChannels::new(
        (0..n_r)
            .map(|_| {
                (0..n_d)
                    .map(|_| draw_channel(&pdp, &mut rng).freq_response(m))
                    .collect()
            })
            .collect::<scfde::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())
}

fn check_fixed_point(_: &Ctx) -> Result<(), String> {
    let opts = SolverOptions {
        epsilon: 1e-10,
        max_iterations: 2000,
        initial_alpha: None,
    };
    let snr_hat = 10.0;
    for seed in 0..8u64 {
        let g = draw_destination_channels(1000 + seed, 2, 2, 32)?;
        for lags in [&[][..], &[1, 2][..]] {
            let state = if lags.is_empty() {
                optimize_fde(&g, snr_hat, &opts)
            } else {
                optimize_fde_dfe(&g, snr_hat, lags, &opts)
            }
            .map_err(|e| e.to_string())?;
            let residual = kkt_residual(&g, &state, snr_hat);
            if residual > 1e-4 {
                return Err(format!("seed {seed}: residual {residual:.2e}"));
            }
            let budget = (state.alpha.total_power() - 1.0).abs();
            if budget > 1e-8 {
                return Err(format!("seed {seed}: budget error {budget:.2e}"));
            }
        }
    }
    Ok(())
}

fn check_beats_equal_split(_: &Ctx) -> Result<(), String> {
    let opts = SolverOptions {
        epsilon: 1e-10,
        max_iterations: 2000,
        initial_alpha: None,
    };
    let snr_hat = 10.0;
    for seed in 0..8u64 {
        let g = draw_destination_channels(1000 + seed, 2, 2, 32)?;
        let equal = equal_allocation(2).map_err(|e| e.to_string())?;
        for lags in [&[][..], &[1, 2][..]] {
            let state = if lags.is_empty() {
                optimize_fde(&g, snr_hat, &opts)
            } else {
                optimize_fde_dfe(&g, snr_hat, lags, &opts)
            }
            .map_err(|e| e.to_string())?;
            let optimized =
                designed_cost(&g, &state.alpha, snr_hat, lags).map_err(|e| e.to_string())?;
            let uniform = designed_cost(&g, &equal, snr_hat, lags).map_err(|e| e.to_string())?;
            if optimized > uniform + 1e-9 {
                return Err(format!(
                    "seed {seed}: optimized cost {optimized:.6} above equal split {uniform:.6}"
                ));
            }
        }
    }
    Ok(())
}

fn check_noiseless_link(_: &Ctx) -> Result<(), String> {
    let cfg = SimConfig {
        m: 64,
        l_cp: 8,
        n_r: 2,
        n_d: 2,
        l_h: 3,
        l_g: 3,
        snr_db_grid: vec![f64::INFINITY],
        trials: 4,
        ..SimConfig::default()
    };
    for trial in 0..cfg.trials as u64 {
        let result = run_trial(&cfg, f64::INFINITY, trial).map_err(|e| e.to_string())?;
        if result.bit_errors != 0 {
            return Err(format!(
                "trial {trial}: {} errors without noise",
                result.bit_errors
            ));
        }
    }
    Ok(())
}

fn check_deep_noise(_: &Ctx) -> Result<(), String> {
    let cfg = SimConfig {
        m: 256,
        l_cp: 4,
        n_r: 1,
        n_d: 1,
        l_h: 3,
        l_g: 3,
        snr_db_grid: vec![-40.0],
        trials: 8,
        ..SimConfig::default()
    };
    let mut errors = 0u64;
    let mut bits = 0u64;
    for trial in 0..cfg.trials as u64 {
        let result = run_trial(&cfg, -40.0, trial).map_err(|e| e.to_string())?;
        errors += result.bit_errors;
        bits += result.bits;
    }
    let ber = errors as f64 / bits as f64;
    if (ber - 0.5).abs() > 0.035 {
        return Err(format!("ber {ber:.4} is not coin-flip at -40 dB"));
    }
    Ok(())
}
