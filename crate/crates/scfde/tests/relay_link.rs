//! End-to-end behavior of the two-hop link through the public API.

use scfde::link_sim::{
    run_sweep, run_trial, FeedbackPolicy, PowerAllocStrategy, Scheme, SimConfig,
};

fn base_config() -> SimConfig {
    SimConfig {
        m: 256,
        l_cp: 8,
        l_h: 3,
        l_g: 3,
        n_r: 2,
        n_d: 2,
        trials: 64,
        snr_db_grid: vec![10.0],
        ..SimConfig::default()
    }
}

#[test]
fn noiseless_multipath_link_delivers_every_bit() {
    // At infinite snr the per-tone weights invert the channel exactly, so
    // even a frequency-selective link must come out error-free end to end.
    let cfg = SimConfig {
        m: 128,
        l_cp: 4,
        trials: 6,
        ..base_config()
    };
    for t in 0..cfg.trials as u64 {
        let outcome = run_trial(&cfg, f64::INFINITY, t).unwrap();
        assert_eq!(outcome.relay_bit_errors, 0, "relay errors in trial {t}");
        assert_eq!(outcome.bit_errors, 0, "destination errors in trial {t}");
    }
}

#[test]
fn antenna_diversity_lowers_the_error_rate() {
    // Same seeds, more antennas: the (2, 2) link must beat the (1, 1) link
    // clearly at a moderate SNR.
    let single = SimConfig {
        n_r: 1,
        n_d: 1,
        snr_db_grid: vec![12.0],
        ..base_config()
    };
    let double = SimConfig {
        n_r: 2,
        n_d: 2,
        ..single.clone()
    };
    let ber_single = run_sweep(&single).unwrap()[0].ber;
    let ber_double = run_sweep(&double).unwrap()[0].ber;
    assert!(
        ber_double < ber_single,
        "(2,2) ber {ber_double} not below (1,1) ber {ber_single}"
    );
}

#[test]
fn decision_feedback_helps_on_selective_channels() {
    // With genie feedback the hybrid equalizer can only remove intersymbol
    // interference, so it must not lose to the plain per-tone receiver on the
    // same seeds.
    let plain = SimConfig {
        scheme: Scheme::Fde,
        ..base_config()
    };
    let hybrid = SimConfig {
        scheme: Scheme::FdeDfe,
        feedback_mode: FeedbackPolicy::Genie,
        ..base_config()
    };
    let ber_plain = run_sweep(&plain).unwrap()[0].ber;
    let ber_hybrid = run_sweep(&hybrid).unwrap()[0].ber;
    assert!(
        ber_hybrid <= ber_plain,
        "genie dfe ber {ber_hybrid} above fde ber {ber_plain}"
    );
}

#[test]
fn optimized_allocation_does_not_hurt_in_simulation() {
    let equal = SimConfig {
        power_alloc: PowerAllocStrategy::Epa,
        ..base_config()
    };
    let optimized = SimConfig {
        power_alloc: PowerAllocStrategy::Opa,
        ..base_config()
    };
    let rec_equal = &run_sweep(&equal).unwrap()[0];
    let rec_opt = &run_sweep(&optimized).unwrap()[0];
    assert_eq!(rec_opt.opa_nonconvergence_count, 0);
    assert!(
        rec_opt.ber <= rec_equal.ber + rec_equal.ci95_halfwidth + rec_opt.ci95_halfwidth,
        "opa ber {} worse than epa ber {} beyond both confidence widths",
        rec_opt.ber,
        rec_equal.ber
    );
}
