//! Cluster bootstrap, trend-assessment tests, and report assembly.
//!
//! Resampling draws whole clusters (the level treatment was assigned at,
//! defaulting to units) with replacement. Replicate b always uses stream
//! (b << 8 | attempt) of a counter-based generator keyed by the user seed,
//! so results are identical across worker counts and execution orders.
//! Covariances use the 1/B divisor.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{did_pretrend, did_sequential, kdid_coefficients, ResolvedOperator};
use crate::panel::{CellTable, GroupAssignment, PanelDataset};

/// Generator identity recorded in output metadata.
pub const RNG_IDENTITY: &str = "chacha12/stream-per-replicate";

/// A set of statistics recomputed together on each cluster resample.
/// `eval` receives the drawn cluster multiset (repeats included) and must
/// be deterministic given the draw.
pub trait Battery: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn labels(&self) -> Vec<String>;
    fn eval(&self, draw: &[usize]) -> Result<Vec<f64>>;
}

/// Battery built from independent closures.
pub struct ClosureBattery<'a> {
    labels: Vec<String>,
    #[allow(clippy::type_complexity)]
    fns: Vec<Box<dyn Fn(&[usize]) -> Result<f64> + Sync + 'a>>,
}

impl<'a> ClosureBattery<'a> {
    pub fn new() -> Self {
        ClosureBattery {
            labels: Vec::new(),
            fns: Vec::new(),
        }
    }

    pub fn push<F>(mut self, label: &str, f: F) -> Self
    where
        F: Fn(&[usize]) -> Result<f64> + Sync + 'a,
    {
        self.labels.push(label.to_string());
        self.fns.push(Box::new(f));
        self
    }
}

impl<'a> Default for ClosureBattery<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Battery for ClosureBattery<'a> {
    fn len(&self) -> usize {
        self.fns.len()
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn eval(&self, draw: &[usize]) -> Result<Vec<f64>> {
        self.fns.iter().map(|f| f(draw)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapSpec {
    /// Number of replicates B.
    pub replicates: usize,
    pub seed: u64,
    /// Redraw budget per replicate before the run is declared unstable.
    pub max_redraw: usize,
}

impl BootstrapSpec {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapSpec {
            replicates,
            seed,
            max_redraw: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapRun {
    /// K x K covariance of the battery across replicates, divisor B.
    pub vcov: DMatrix<f64>,
    pub replicate_means: Vec<f64>,
    /// Raw replicate values, B rows of K entries.
    pub replicates: Vec<Vec<f64>>,
    /// Draws that hit an empty cell and were retried.
    pub redrawn: usize,
}

fn replicate_rng(seed: u64, replicate: u64, attempt: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | (attempt & 0xff));
    rng
}

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::EmptyCell { .. } | Error::NoCleanControl { .. })
}

/// Resamples clusters with replacement and returns the empirical
/// covariance of the battery. Replicates that lose a required cell are
/// redrawn on their own substreams; a run where more than 20% of
/// replicates needed a redraw is rejected as unstable.
pub fn bootstrap_vcov(
    data: &PanelDataset,
    battery: &dyn Battery,
    spec: &BootstrapSpec,
) -> Result<BootstrapRun> {
    if spec.replicates < 2 {
        return Err(Error::Config("need at least 2 bootstrap replicates".into()));
    }
    let n = data.n_clusters();
    let b = spec.replicates;
    let runs: std::result::Result<Vec<(Vec<f64>, usize)>, Error> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut attempt = 0usize;
            loop {
                let mut rng = replicate_rng(spec.seed, rep as u64, attempt as u64);
                let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                match battery.eval(&draw) {
                    Ok(v) => return Ok((v, attempt)),
                    Err(e) if is_degenerate(&e) => {
                        attempt += 1;
                        if attempt > spec.max_redraw {
                            return Err(Error::UnstableResampling {
                                degenerate: attempt,
                                total: spec.replicates,
                                limit: spec.max_redraw,
                            });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();
    let runs = runs?;

    let redrawn_replicates = runs.iter().filter(|(_, a)| *a > 0).count();
    if redrawn_replicates * 5 > b {
        return Err(Error::UnstableResampling {
            degenerate: redrawn_replicates,
            total: b,
            limit: b / 5,
        });
    }
    let redrawn: usize = runs.iter().map(|(_, a)| *a).sum();

    let k = battery.len();
    let mut means = vec![0.0f64; k];
    for (v, _) in &runs {
        for (m, x) in means.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= b as f64;
    }
    let mut vcov = DMatrix::zeros(k, k);
    for (v, _) in &runs {
        for i in 0..k {
            let di = v[i] - means[i];
            for j in i..k {
                vcov[(i, j)] += di * (v[j] - means[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let x = vcov[(i, j)] / b as f64;
            vcov[(i, j)] = x;
            vcov[(j, i)] = x;
        }
    }
    Ok(BootstrapRun {
        vcov,
        replicate_means: means,
        replicates: runs.into_iter().map(|(v, _)| v).collect(),
        redrawn,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Two-sided normal confidence interval.
pub fn normal_ci(point: f64, se: f64, level: f64) -> (f64, f64) {
    let z = std_normal().inverse_cdf(0.5 + level / 2.0);
    (point - z * se, point + z * se)
}

/// Two-sided normal p-value for point/se.
pub fn normal_p_value(point: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if point == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (1.0 - std_normal().cdf((point / se).abs()))
}

/// Equivalence interval derived from an inner confidence interval: the
/// bound is the largest magnitude the inner interval reaches, so effects
/// outside [-bound, bound] are rejected at the stated level.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCi {
    pub level: f64,
    pub point: f64,
    pub se: f64,
    /// Inner two-sided interval at confidence 2*level - 1.
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Equivalence interval is [-bound, bound].
    pub bound: f64,
    pub standardized: bool,
}

/// Builds the equivalence interval. When `baseline_sd` is given, the point
/// and SE are standardized by it first, so the bound reads in units of the
/// baseline outcome spread.
pub fn equivalence_ci(
    point: f64,
    se: f64,
    baseline_sd: Option<f64>,
    level: f64,
) -> Result<EquivalenceCi> {
    if !(0.5..1.0).contains(&level) {
        return Err(Error::Config(format!(
            "equivalence level must lie in [0.5, 1), got {}",
            level
        )));
    }
    if !se.is_finite() || se < 0.0 {
        return Err(Error::Validation(format!("invalid standard error {}", se)));
    }
    let (point, se, standardized) = match baseline_sd {
        Some(sd) => {
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::Validation(format!(
                    "baseline standard deviation must be positive, got {}",
                    sd
                )));
            }
            (point / sd, se / sd, true)
        }
        None => (point, se, false),
    };
    // A level-q equivalence interval comes from the inner CI at 2q-1: its
    // endpoints sit z_q standard errors from the point.
    let z = std_normal().inverse_cdf(level);
    let ci_lower = point - z * se;
    let ci_upper = point + z * se;
    let bound = ci_lower.abs().max(ci_upper.abs());
    Ok(EquivalenceCi {
        level,
        point,
        se,
        ci_lower,
        ci_upper,
        bound,
        standardized,
    })
}

/// Mean and sample standard deviation of the control group's outcome at
/// the earliest observed period: the standardization baseline.
pub fn baseline_scale(data: &PanelDataset, assign: &GroupAssignment) -> Result<(f64, f64)> {
    let mut values = Vec::new();
    for (r, &u) in data.row_unit().iter().enumerate() {
        if data.row_time()[r] == 0 && !assign.in_treated_group(u) {
            values.push(data.rows()[r].outcome);
        }
    }
    if values.len() < 2 {
        return Err(Error::Validation(
            "need at least two control observations in the earliest period to standardize"
                .into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::Validation(
            "baseline outcome has zero variance; cannot standardize".into(),
        ));
    }
    Ok((mean, var.sqrt()))
}

/// Placebo contrast on pre-treatment periods with bootstrap uncertainty.
#[derive(Debug, Clone, Serialize)]
pub struct PretrendReport {
    pub order: u32,
    pub periods: Vec<i64>,
    pub point: f64,
    pub se: f64,
    pub p_value: f64,
    pub equivalence: EquivalenceCi,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub n_boot: usize,
    pub redrawn: usize,
}

/// Assesses pre-treatment trends. Order 1 contrasts the last two
/// pre-periods; order 2 applies the double difference to the last three,
/// probing whether the group gap moved linearly. The equivalence interval
/// is standardized by the control group's baseline spread.
pub fn pretrend_test(
    data: &PanelDataset,
    assign: &GroupAssignment,
    order: u32,
    boot: &BootstrapSpec,
    level: f64,
) -> Result<PretrendReport> {
    let t_star = assign
        .onset_index()
        .ok_or_else(|| Error::Misuse("pre-trend test needs a single-onset design".into()))?;
    let (point, op) = match order {
        1 => {
            let est = did_pretrend(data, assign, None)?;
            let op = ResolvedOperator {
                periods: vec![t_star - 2, t_star - 1],
                coeffs: vec![-1.0, 1.0],
            };
            (est, op)
        }
        2 => {
            if t_star < 3 {
                return Err(Error::Misuse(
                    "order-2 trend assessment needs three pre-treatment periods".into(),
                ));
            }
            let pts = (
                data.time_label(t_star - 1),
                data.time_label(t_star - 2),
                data.time_label(t_star - 3),
            );
            let est = did_sequential(data, assign, Some(pts))?;
            let op = ResolvedOperator {
                periods: vec![t_star - 3, t_star - 2, t_star - 1],
                coeffs: vec![1.0, -2.0, 1.0],
            };
            (est, op)
        }
        other => {
            return Err(Error::Misuse(format!(
                "trend assessment supports orders 1 and 2, got {}",
                other
            )))
        }
    };

    let table = crate::estimators::basic_cells(data, assign);
    let op_ref = &op;
    let table_ref = &table;
    let battery = ClosureBattery::new().push("pretrend", move |draw: &[usize]| {
        let cells = table_ref.aggregate(draw);
        crate::estimators::apply_operator(&cells, op_ref).ok_or(Error::EmptyCell {
            group: "either".into(),
            time: -1,
        })
    });
    let run = bootstrap_vcov(data, &battery, boot)?;
    let se = run.vcov[(0, 0)].sqrt();
    let (baseline_mean, baseline_sd) = baseline_scale(data, assign)?;
    let equivalence = equivalence_ci(point.value, se, Some(baseline_sd), level)?;
    Ok(PretrendReport {
        order,
        periods: point.periods,
        point: point.value,
        se,
        p_value: normal_p_value(point.value, se),
        equivalence,
        baseline_mean,
        baseline_sd,
        n_boot: boot.replicates,
        redrawn: run.redrawn,
    })
}

/// Battery evaluating a fixed set of difference operators on a cell table.
pub struct OperatorBattery {
    table: CellTable,
    ops: Vec<(String, ResolvedOperator)>,
}

impl OperatorBattery {
    /// Operators of the given orders at one lead, anchored at the onset.
    pub fn for_orders(
        data: &PanelDataset,
        assign: &GroupAssignment,
        orders: &[u32],
        s: u32,
    ) -> Result<OperatorBattery> {
        let t_star = assign
            .onset_index()
            .ok_or_else(|| Error::Misuse("operator battery needs a single-onset design".into()))?;
        let mut ops = Vec::with_capacity(orders.len());
        for &k in orders {
            if k == 0 || k as usize > t_star {
                return Err(Error::Misuse(format!(
                    "order {} is outside the usable range 1..={}",
                    k, t_star
                )));
            }
            let op = kdid_coefficients(k, s).resolve(t_star, data.n_periods())?;
            ops.push((format!("did[k={},s={}]", k, s), op));
        }
        Ok(OperatorBattery {
            table: crate::estimators::basic_cells(data, assign),
            ops,
        })
    }
}

impl Battery for OperatorBattery {
    fn len(&self) -> usize {
        self.ops.len()
    }

    fn labels(&self) -> Vec<String> {
        self.ops.iter().map(|(l, _)| l.clone()).collect()
    }

    fn eval(&self, draw: &[usize]) -> Result<Vec<f64>> {
        let cells = self.table.aggregate(draw);
        self.ops
            .iter()
            .map(|(_, op)| {
                crate::estimators::apply_operator(&cells, op).ok_or(Error::EmptyCell {
                    group: "either".into(),
                    time: -1,
                })
            })
            .collect()
    }
}

/// One estimate serialized for the machine interface. Field names are
/// stable so downstream tooling can rely on them.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub point: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub p_value: Option<f64>,
    pub equiv_bound: Option<f64>,
    pub weights: Vec<f64>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    pub fn from_point_se(estimator: &str, point: f64, se: f64, level: f64) -> EstimateReport {
        let (lo, hi) = normal_ci(point, se, level);
        EstimateReport {
            estimator: estimator.to_string(),
            point,
            se: Some(se),
            ci_lower: Some(lo),
            ci_upper: Some(hi),
            p_value: Some(normal_p_value(point, se)),
            equiv_bound: None,
            weights: Vec::new(),
            notes: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{assign_groups, DatasetMode, Design, PanelBuilder};

    fn small_panel() -> PanelDataset {
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..10 {
            let g = u < 5;
            for t in 0..3 {
                let y = u as f64 * 0.1 + t as f64 + if g && t == 2 { 1.0 } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, g && t == 2);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn two_replicate_variance_identity() {
        let data = small_panel();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let battery = OperatorBattery::for_orders(&data, &assign, &[1], 0).unwrap();
        let run = bootstrap_vcov(&data, &battery, &BootstrapSpec::new(2, 99)).unwrap();
        let x1 = run.replicates[0][0];
        let x2 = run.replicates[1][0];
        let mean = (x1 + x2) / 2.0;
        let expected = 0.5 * ((x1 - mean).powi(2) + (x2 - mean).powi(2));
        assert!((run.vcov[(0, 0)] - expected).abs() < 1e-15);
        // Same seed, same draw sequence.
        let again = bootstrap_vcov(&data, &battery, &BootstrapSpec::new(2, 99)).unwrap();
        assert_eq!(run.replicates, again.replicates);
        // Different seed, different draws.
        let other = bootstrap_vcov(&data, &battery, &BootstrapSpec::new(2, 100)).unwrap();
        assert_ne!(run.replicates, other.replicates);
    }

    #[test]
    fn bootstrap_is_deterministic_under_any_worker_count() {
        let data = small_panel();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let battery = OperatorBattery::for_orders(&data, &assign, &[1, 2], 0).unwrap();
        let baseline = bootstrap_vcov(&data, &battery, &BootstrapSpec::new(64, 7)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool
            .install(|| bootstrap_vcov(&data, &battery, &BootstrapSpec::new(64, 7)))
            .unwrap();
        assert_eq!(baseline.replicates, serial.replicates);
        assert_eq!(baseline.vcov, serial.vcov);
    }

    #[test]
    fn unstable_resampling_is_reported() {
        // One treated unit only: any draw that misses cluster 0 loses the
        // treated cell entirely, and with 3 clusters that happens for a
        // large share of draws.
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for t in 0..2 {
            b = b
                .row("t1", t, 1.0, t == 1)
                .row("c1", t, 0.0, false)
                .row("c2", t, 0.1, false);
        }
        let data = b.build().unwrap();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let battery = OperatorBattery::for_orders(&data, &assign, &[1], 0).unwrap();
        let err = bootstrap_vcov(&data, &battery, &BootstrapSpec::new(200, 3)).unwrap_err();
        assert!(matches!(err, Error::UnstableResampling { .. }), "{}", err);
    }

    #[test]
    fn equivalence_bound_is_max_endpoint_magnitude() {
        let ci = equivalence_ci(-0.007, 0.096, None, 0.95).unwrap();
        // z at 0.95 is 1.6449; the inner 90% interval is the point plus or
        // minus z * se, and the bound is its larger endpoint in magnitude.
        assert!((ci.ci_lower - (-0.007 - 1.6448536269514722 * 0.096)).abs() < 1e-12);
        assert!((ci.ci_upper - (-0.007 + 1.6448536269514722 * 0.096)).abs() < 1e-12);
        assert!((ci.bound - ci.ci_lower.abs()).abs() < 1e-12);
        assert!(ci.bound >= ci.ci_upper.abs());
        // Shifting the point away from zero can only grow the bound.
        let wider = equivalence_ci(-0.107, 0.096, None, 0.95).unwrap();
        assert!(wider.bound > ci.bound);
    }

    #[test]
    fn equivalence_standardization_divides_by_baseline_sd() {
        let raw = equivalence_ci(0.4, 0.1, None, 0.95).unwrap();
        let std = equivalence_ci(0.4, 0.1, Some(2.0), 0.95).unwrap();
        assert!((std.point - 0.2).abs() < 1e-15);
        assert!((std.bound - raw.bound / 2.0).abs() < 1e-12);
        assert!(std.standardized);
    }

    #[test]
    fn pretrend_orders_and_errors() {
        let data = small_panel();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let boot = BootstrapSpec::new(50, 11);
        let rep = pretrend_test(&data, &assign, 1, &boot, 0.95).unwrap();
        // Parallel paths by construction: the placebo contrast is zero.
        assert!(rep.point.abs() < 1e-12, "point {}", rep.point);
        assert!(rep.se >= 0.0);
        assert!(rep.p_value > 0.9);
        assert_eq!(rep.periods, vec![0, 1]);
        // Order 2 needs a third pre-period.
        let err = pretrend_test(&data, &assign, 2, &boot, 0.95).unwrap_err();
        assert!(err.to_string().contains("three pre-treatment"), "{}", err);
        let err = pretrend_test(&data, &assign, 3, &boot, 0.95).unwrap_err();
        assert!(err.to_string().contains("orders 1 and 2"), "{}", err);
    }

    #[test]
    fn report_ci_contains_point() {
        let rep = EstimateReport::from_point_se("x", 1.3, 0.4, 0.95);
        assert!(rep.ci_lower.unwrap() <= rep.point && rep.point <= rep.ci_upper.unwrap());
        let json = serde_json::to_value(&rep).unwrap();
        for key in [
            "estimator",
            "point",
            "se",
            "ci_lower",
            "ci_upper",
            "p_value",
            "equiv_bound",
            "weights",
            "notes",
        ] {
            assert!(json.get(key).is_some(), "missing field {}", key);
        }
    }
}
