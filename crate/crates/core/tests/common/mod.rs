//! Dataset generators shared by the integration suites. Every generator
//! is fully determined by its seed.

#![allow(dead_code)]

use doubledid::panel::{DatasetMode, PanelBuilder, PanelDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Balanced panel with unit effects, free period effects, a free group
/// gap per period, noise, and a planted effect from `onset` on. The first
/// half of the units is the treated group.
pub fn balanced_panel(
    seed: u64,
    n_units: usize,
    n_periods: usize,
    onset: usize,
) -> PanelDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let period_fx: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gap: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let tau: f64 = rng.gen_range(-1.0..1.0);
    let mut b = PanelBuilder::new(DatasetMode::Panel);
    for i in 0..n_units {
        let g = i < n_units / 2;
        let unit_fx: f64 = rng.gen_range(-1.0..1.0);
        for t in 0..n_periods {
            let d = g && t >= onset;
            let y = period_fx[t]
                + unit_fx
                + if g { gap[t] } else { 0.0 }
                + if d { tau } else { 0.0 }
                + rng.gen_range(-0.3..0.3);
            b = b.row(&format!("u{}", i), t as i64, y, d);
        }
    }
    b.build().expect("generated panel is valid")
}

/// Repeated cross sections with deliberately unequal cell counts. The
/// treatment column marks group membership, constant within unit, and the
/// onset is set explicitly as that mode requires.
pub fn cross_section(seed: u64, n_periods: usize, onset: usize) -> PanelDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let period_fx: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gap: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let tau: f64 = rng.gen_range(-1.0..1.0);
    let mut b = PanelBuilder::new(DatasetMode::RepeatedCrossSection).onset(onset as i64);
    let mut uid = 0usize;
    for t in 0..n_periods {
        for g in [true, false] {
            let count = rng.gen_range(1..=5);
            for _ in 0..count {
                let d = g && t >= onset;
                let y = period_fx[t]
                    + if g { gap[t] } else { 0.0 }
                    + if d { tau } else { 0.0 }
                    + rng.gen_range(-0.5..0.5);
                b = b.row(&format!("s{}", uid), t as i64, y, g);
                uid += 1;
            }
        }
    }
    b.build().expect("generated cross section is valid")
}

/// Balanced staggered panel: `cohorts` lists (adoption period, units per
/// cohort); `n_controls` units never adopt. Unit and period effects, a
/// per-cohort level gap, noise, and a constant effect once treated.
pub fn staggered_panel(
    seed: u64,
    cohorts: &[(i64, usize)],
    n_controls: usize,
    n_periods: usize,
    noise: f64,
) -> PanelDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let period_fx: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tau: f64 = rng.gen_range(0.1..0.9);
    let mut b = PanelBuilder::new(DatasetMode::Panel);
    let mut uid = 0usize;
    let push_unit = |b: PanelBuilder,
                         rng: &mut ChaCha12Rng,
                         uid: &mut usize,
                         adoption: Option<i64>,
                         cohort_gap: f64|
     -> PanelBuilder {
        let unit_fx: f64 = rng.gen_range(-1.0..1.0);
        let mut b = b;
        for (t, pfx) in period_fx.iter().enumerate() {
            let d = adoption.is_some_and(|a| (t as i64) >= a);
            let y = pfx
                + unit_fx
                + cohort_gap
                + if d { tau } else { 0.0 }
                + rng.gen_range(-noise..noise.max(1e-12));
            b = b.row(&format!("u{}", uid), t as i64, y, d);
        }
        *uid += 1;
        b
    };
    for &(adoption, n) in cohorts {
        let cohort_gap: f64 = rng.gen_range(-0.4..0.4);
        for _ in 0..n {
            b = push_unit(b, &mut rng, &mut uid, Some(adoption), cohort_gap);
        }
    }
    for _ in 0..n_controls {
        b = push_unit(b, &mut rng, &mut uid, None, 0.0);
    }
    b.build().expect("generated staggered panel is valid")
}

/// Noiseless panel whose group gap follows the given polynomial in the
/// period index, with a constant planted effect from `onset` on. Order-k
/// contrasts remove polynomial gaps up to degree k-1 exactly.
pub fn polynomial_panel(
    seed: u64,
    n_units: usize,
    n_periods: usize,
    onset: usize,
    poly: &[f64],
    tau: f64,
) -> PanelDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let period_fx: Vec<f64> = (0..n_periods).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut b = PanelBuilder::new(DatasetMode::Panel);
    for i in 0..n_units {
        let g = i < n_units / 2;
        let unit_fx: f64 = rng.gen_range(-1.0..1.0);
        for (t, pfx) in period_fx.iter().enumerate() {
            let d = g && t >= onset;
            let trend: f64 = poly
                .iter()
                .enumerate()
                .map(|(j, c)| c * (t as f64).powi(j as i32))
                .sum();
            let y = pfx
                + unit_fx
                + if g { trend } else { 0.0 }
                + if d { tau } else { 0.0 };
            b = b.row(&format!("u{}", i), t as i64, y, d);
        }
    }
    b.build().expect("generated polynomial panel is valid")
}
