//! Seeded simulation studies of the estimator family.
//!
//! The data generator produces five-period panels with serially
//! correlated unit noise and one of two confounding patterns: a constant
//! group gap, which every estimator here absorbs, or a group gap that
//! grows linearly in time, which biases any estimator leaning on a level
//! baseline while leaving the double-difference family centered. All
//! randomness is counter-seeded per (replicate, unit), so results are
//! identical across thread counts and runs.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{did_extended_all, did_sequential, did_standard};
use crate::gmm::{double_did, DoubleDidOptions, Regime};
use crate::inference::{bootstrap_vcov, normal_ci, BootstrapSpec, OperatorBattery};
use crate::panel::{assign_groups, DatasetMode, Design, PanelBuilder, PanelDataset};

/// Periods per generated panel; treatment switches on in the last one.
const SIM_PERIODS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SimEstimator {
    /// Bootstrap-weighted combination of the difference orders the
    /// scenario's assumption regime allows.
    Double,
    /// Post gap minus the average of all pre-period gaps.
    Extended,
    /// Double difference at the onset.
    Sequential,
    /// Plain one-back contrast.
    Standard,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 4] = [
        SimEstimator::Double,
        SimEstimator::Extended,
        SimEstimator::Sequential,
        SimEstimator::Standard,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::Double => "double",
            SimEstimator::Extended => "extended",
            SimEstimator::Sequential => "sequential",
            SimEstimator::Standard => "standard",
        }
    }
}

impl std::str::FromStr for SimEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<SimEstimator> {
        match s.trim().to_ascii_lowercase().as_str() {
            "double" => Ok(SimEstimator::Double),
            "extended" => Ok(SimEstimator::Extended),
            "sequential" => Ok(SimEstimator::Sequential),
            "standard" => Ok(SimEstimator::Standard),
            other => Err(Error::Config(format!(
                "unknown estimator '{}': expected double, extended, sequential, or standard",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationConfig {
    /// 1 keeps the group gap constant, 2 makes it grow linearly in time.
    pub scenario: u8,
    pub n_units: usize,
    /// AR(1) coefficient of the unit noise, strictly inside (-1, 1).
    pub rho: f64,
    /// Monte Carlo replicates.
    pub replicates: usize,
    pub seed: u64,
    /// True effect added in the post period.
    pub tau: f64,
    /// Standard deviation of the AR(1) innovations.
    pub innovation_sd: f64,
    /// Bootstrap replicates inside each Monte Carlo replicate.
    pub bootstrap: usize,
    pub estimators: Vec<SimEstimator>,
}

impl SimulationConfig {
    pub fn new(scenario: u8, n_units: usize, rho: f64, replicates: usize, seed: u64) -> Self {
        SimulationConfig {
            scenario,
            n_units,
            rho,
            replicates,
            seed,
            tau: 0.2,
            innovation_sd: 3.0f64.sqrt(),
            bootstrap: 200,
            estimators: SimEstimator::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scenario == 1 || self.scenario == 2) {
            return Err(Error::Config(format!(
                "scenario must be 1 or 2, got {}",
                self.scenario
            )));
        }
        if self.n_units < 4 {
            return Err(Error::Config("need at least 4 units".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("need at least 1 replicate".into()));
        }
        if !self.rho.is_finite() || self.rho.abs() >= 1.0 {
            return Err(Error::Config(format!(
                "autocorrelation must lie strictly inside (-1, 1), got {}",
                self.rho
            )));
        }
        if !self.innovation_sd.is_finite() || self.innovation_sd < 0.0 {
            return Err(Error::Config("innovation sd must be nonnegative".into()));
        }
        if self.bootstrap < 2 {
            return Err(Error::Config("need at least 2 bootstrap replicates".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        Ok(())
    }

    /// Assumption regime the scenario satisfies: a constant gap supports
    /// every order, a linear gap only orders two and up.
    pub fn regime(&self) -> Regime {
        if self.scenario == 1 {
            Regime::ExtendedParallel
        } else {
            Regime::TrendsInTrends
        }
    }
}

/// One splitmix step, used to derive per-replicate bootstrap seeds from
/// the study seed without correlating the streams.
fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates Monte Carlo replicate `m`. The first half of the units is
/// the treated group; each unit's noise runs on its own counter-derived
/// stream started at the stationary distribution.
pub fn generate_panel(cfg: &SimulationConfig, m: usize) -> Result<PanelDataset> {
    cfg.validate()?;
    let half = cfg.n_units / 2;
    let stationary_sd = cfg.innovation_sd / (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut b = PanelBuilder::new(DatasetMode::Panel);
    for i in 0..cfg.n_units {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        rng.set_stream(((m as u64) << 32) | i as u64);
        let g = i < half;
        let mut eps = stationary_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        for t in 0..SIM_PERIODS {
            if t > 0 {
                let xi: f64 = StandardNormal.sample(&mut rng);
                eps = cfg.rho * eps + cfg.innovation_sd * xi;
            }
            let alpha = (t + 1) as f64;
            let gap = if g {
                match cfg.scenario {
                    1 => 0.05,
                    _ => 0.1 * (t + 1) as f64,
                }
            } else {
                0.0
            };
            let treated = g && t == SIM_PERIODS - 1;
            let y = alpha + gap + if treated { cfg.tau } else { 0.0 } + eps;
            b = b.row(&format!("u{}", i), t as i64, y, treated);
        }
    }
    b.build()
}

/// Estimates for one replicate, aligned with `cfg.estimators`.
pub fn replicate_estimates(cfg: &SimulationConfig, m: usize) -> Result<Vec<f64>> {
    let data = generate_panel(cfg, m)?;
    let assign = assign_groups(&data, Design::Basic)?;
    let mut out = Vec::with_capacity(cfg.estimators.len());
    for est in &cfg.estimators {
        let v = match est {
            SimEstimator::Standard => did_standard(&data, &assign, None)?.value,
            SimEstimator::Extended => did_extended_all(&data, &assign)?.value,
            SimEstimator::Sequential => did_sequential(&data, &assign, None)?.value,
            SimEstimator::Double => {
                let opts = DoubleDidOptions {
                    regime: cfg.regime(),
                    ..DoubleDidOptions::default()
                };
                let boot = BootstrapSpec::new(cfg.bootstrap, mix_seed(cfg.seed, m as u64));
                double_did(&data, &assign, &opts, &boot)?.result.point
            }
        };
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub estimator: String,
    pub scenario: u8,
    pub n: usize,
    pub rho: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Absolute deviation of the Monte Carlo mean from the true effect.
    pub abs_bias: f64,
    /// Root mean squared deviation from the true effect.
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: SimulationConfig,
    pub rows: Vec<SimRow>,
}

/// Runs the full study: all replicates in parallel, then one summary row
/// per estimator.
pub fn run_study(cfg: &SimulationConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let per: Result<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|m| replicate_estimates(cfg, m))
        .collect();
    let per = per?;
    let m = cfg.replicates as f64;
    let rows = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(j, est)| {
            let mean: f64 = per.iter().map(|v| v[j]).sum::<f64>() / m;
            let mse: f64 = per.iter().map(|v| (v[j] - cfg.tau).powi(2)).sum::<f64>() / m;
            SimRow {
                estimator: est.label().to_string(),
                scenario: cfg.scenario,
                n: cfg.n_units,
                rho: cfg.rho,
                replicates: cfg.replicates,
                seed: cfg.seed,
                abs_bias: (mean - cfg.tau).abs(),
                se: mse.sqrt(),
            }
        })
        .collect();
    Ok(StudyResult {
        config: cfg.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageResult {
    pub level: f64,
    pub covered: usize,
    pub replicates: usize,
    pub rate: f64,
}

/// Fraction of replicates whose bootstrap normal interval for the plain
/// contrast covers the true effect.
pub fn coverage_study(cfg: &SimulationConfig, level: f64) -> Result<CoverageResult> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::Config(format!(
            "coverage level must lie in (0, 1), got {}",
            level
        )));
    }
    let hits: Result<Vec<bool>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|m| {
            let data = generate_panel(cfg, m)?;
            let assign = assign_groups(&data, Design::Basic)?;
            let point = did_standard(&data, &assign, None)?.value;
            let battery = OperatorBattery::for_orders(&data, &assign, &[1], 0)?;
            let boot = BootstrapSpec::new(cfg.bootstrap, mix_seed(cfg.seed, m as u64));
            let run = bootstrap_vcov(&data, &battery, &boot)?;
            let se = run.vcov[(0, 0)].max(0.0).sqrt();
            let (lo, hi) = normal_ci(point, se, level);
            Ok(lo <= cfg.tau && cfg.tau <= hi)
        })
        .collect();
    let hits = hits?;
    let covered = hits.iter().filter(|h| **h).count();
    Ok(CoverageResult {
        level,
        covered,
        replicates: cfg.replicates,
        rate: covered as f64 / cfg.replicates as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::wls_solve;
    use nalgebra::{DMatrix, DVector};

    fn noiseless(scenario: u8) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(scenario, 12, 0.0, 1, 99);
        cfg.innovation_sd = 0.0;
        cfg.bootstrap = 16;
        cfg
    }

    #[test]
    fn constant_gap_leaves_every_estimator_centered() {
        let est = replicate_estimates(&noiseless(1), 0).unwrap();
        for (v, e) in est.iter().zip(&noiseless(1).estimators) {
            assert!((v - 0.2).abs() < 1e-12, "{}: {}", e.label(), v);
        }
    }

    #[test]
    fn linear_gap_biases_level_baselines_by_known_amounts() {
        let cfg = noiseless(2);
        let est = replicate_estimates(&cfg, 0).unwrap();
        let by_label: std::collections::HashMap<&str, f64> = cfg
            .estimators
            .iter()
            .map(|e| e.label())
            .zip(est.iter().cloned())
            .collect();
        // Gap grows 0.1 per period: the one-back contrast absorbs one
        // extra step, the all-pre average 2.5 steps, while the
        // double-difference family cancels the slope entirely.
        assert!((by_label["standard"] - 0.3).abs() < 1e-12);
        assert!((by_label["extended"] - 0.45).abs() < 1e-12);
        assert!((by_label["sequential"] - 0.2).abs() < 1e-12);
        assert!((by_label["double"] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn replicate_streams_are_stable_and_distinct() {
        let cfg = SimulationConfig::new(1, 10, 0.5, 2, 7);
        let a = generate_panel(&cfg, 0).unwrap();
        let b = generate_panel(&cfg, 0).unwrap();
        assert_eq!(a.rows(), b.rows());
        let c = generate_panel(&cfg, 1).unwrap();
        assert_ne!(a.rows(), c.rows());
    }

    #[test]
    fn study_summaries_are_deterministic() {
        let mut cfg = SimulationConfig::new(2, 40, 0.4, 6, 13);
        cfg.bootstrap = 24;
        let r1 = run_study(&cfg).unwrap();
        let r2 = run_study(&cfg).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert_eq!(a.abs_bias.to_bits(), b.abs_bias.to_bits());
            assert_eq!(a.se.to_bits(), b.se.to_bits());
        }
    }

    #[test]
    fn initial_noise_matches_the_stationary_spread() {
        let cfg = SimulationConfig::new(1, 4000, 0.6, 1, 3);
        let data = generate_panel(&cfg, 0).unwrap();
        // Control units at t=0 carry alpha=1 plus the stationary noise.
        let values: Vec<f64> = data
            .rows()
            .iter()
            .filter(|o| o.time == 0 && o.unit.trim_start_matches('u').parse::<usize>().unwrap() >= 2000)
            .map(|o| o.outcome - 1.0)
            .collect();
        assert_eq!(values.len(), 2000);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (values.len() - 1) as f64;
        let expect = 3.0 / (1.0 - 0.36);
        assert!(
            (var - expect).abs() < 0.5,
            "stationary variance {} vs {}",
            var,
            expect
        );
    }

    #[test]
    fn all_pre_extended_equals_the_fixed_effects_fit() {
        // Noisy balanced panel: the all-pre-baseline contrast must match
        // a fixed-effects regression with one post indicator.
        let cfg = SimulationConfig::new(1, 16, 0.3, 1, 21);
        let data = generate_panel(&cfg, 0).unwrap();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let ext = did_extended_all(&data, &assign).unwrap().value;

        let n_units = data.n_units();
        let rows = data.rows();
        let ncols = n_units + 4 + 1;
        let mut x = DMatrix::zeros(rows.len(), ncols);
        let mut y = DVector::zeros(rows.len());
        for (r, obs) in rows.iter().enumerate() {
            let u = data.row_unit()[r];
            let t = data.row_time()[r];
            x[(r, u)] = 1.0;
            if t >= 1 {
                x[(r, n_units + t - 1)] = 1.0;
            }
            if obs.treated {
                x[(r, ncols - 1)] = 1.0;
            }
            y[r] = obs.outcome;
        }
        let names: Vec<String> = (0..ncols).map(|c| format!("c{}", c)).collect();
        let beta = wls_solve(&x, &y, None, &names).unwrap();
        assert!(
            (beta[ncols - 1] - ext).abs() < 1e-10,
            "twfe {} vs all-pre {}",
            beta[ncols - 1],
            ext
        );

        // It is also the average of the one-back contrasts against each
        // pre-period.
        let mut acc = 0.0;
        for j in 0..4 {
            acc += did_standard(&data, &assign, Some((4, j))).unwrap().value;
        }
        assert!((acc / 4.0 - ext).abs() < 1e-12);
    }

    #[test]
    fn coverage_runs_and_reports_a_rate() {
        let mut cfg = SimulationConfig::new(1, 60, 0.3, 8, 5);
        cfg.bootstrap = 60;
        let cov = coverage_study(&cfg, 0.9).unwrap();
        assert_eq!(cov.replicates, 8);
        assert!(cov.rate >= 0.0 && cov.rate <= 1.0);
        assert_eq!(cov.covered as f64 / 8.0, cov.rate);
    }
}
