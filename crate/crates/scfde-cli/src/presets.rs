//! Built-in experiment parameterizations behind the `fig*` subcommands.
//!
//! A preset pins the fields that define its experiment — antenna counts,
//! channel lengths, delay spread, scheme, allocation, and the SNR grid —
//! and leaves the execution knobs (trials, solver tolerance, feedback
//! policy, seed) to the user's configuration.

use scfde::link_sim::{PowerAllocStrategy, Scheme, SimConfig};

#[derive(Debug, Clone, Copy)]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
}

const SNR_GRID_DB: &[f64] = &[0.0, 4.0, 8.0, 12.0, 16.0, 20.0];

/// Scheme/allocation combinations compared by the fig3 and fig4 presets.
const COMBOS: &[(Scheme, PowerAllocStrategy)] = &[
    (Scheme::Fde, PowerAllocStrategy::Epa),
    (Scheme::Fde, PowerAllocStrategy::Opa),
    (Scheme::FdeDfe, PowerAllocStrategy::Epa),
    (Scheme::FdeDfe, PowerAllocStrategy::Opa),
];

pub fn expand(preset: Preset, base: &SimConfig) -> Vec<SimConfig> {
    match preset {
        Preset::Fig2 => [(1, 1), (1, 2), (2, 1), (2, 2), (3, 3)]
            .iter()
            .map(|&(n_r, n_d)| SimConfig {
                n_r,
                n_d,
                scheme: Scheme::Fde,
                power_alloc: PowerAllocStrategy::Epa,
                ..short_channel(base)
            })
            .collect(),
        Preset::Fig3 => COMBOS
            .iter()
            .map(|&(scheme, power_alloc)| SimConfig {
                n_r: 2,
                n_d: 2,
                scheme,
                power_alloc,
                ..short_channel(base)
            })
            .collect(),
        Preset::Fig4 => {
            let spreads = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
            let mut out = Vec::with_capacity(spreads.len() * COMBOS.len());
            for &sigma_t in &spreads {
                for &(scheme, power_alloc) in COMBOS {
                    out.push(SimConfig {
                        n_r: 3,
                        n_d: 3,
                        l_h: 21,
                        l_g: 21,
                        l_cp: 20,
                        b_h: None,
                        b_g: None,
                        sigma_t,
                        snr_db_grid: vec![10.0],
                        scheme,
                        power_alloc,
                        ..base.clone()
                    });
                }
            }
            out
        }
    }
}

/// Common ground for the SNR-sweep presets: three-tap channels with a
/// comfortable cyclic prefix and two symbol periods of delay spread.
fn short_channel(base: &SimConfig) -> SimConfig {
    SimConfig {
        l_h: 3,
        l_g: 3,
        l_cp: 20,
        b_h: None,
        b_g: None,
        sigma_t: 2.0,
        snr_db_grid: SNR_GRID_DB.to_vec(),
        ..base.clone()
    }
}
