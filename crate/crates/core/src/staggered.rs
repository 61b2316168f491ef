//! Staggered adoption: units switch on treatment at different periods.
//!
//! Each adoption cohort gets its own estimate, built against the clean
//! controls for that cohort and horizon: units still untreated through
//! the evaluation window. Cohort estimates are averaged with adoption
//! shares, and the averaged moments are combined with bootstrap-estimated
//! weights, so a design with a single cohort collapses exactly to the
//! common-onset machinery.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{apply_operator, kdid_coefficients, ResolvedOperator};
use crate::gmm::{combine_estimated, default_orders, DoubleDidOptions, GmmResult};
use crate::inference::{
    bootstrap_vcov, equivalence_ci, normal_p_value, Battery, BootstrapSpec, PretrendReport,
};
use crate::panel::{CellMeans, CellTable, Design, GroupAssignment, PanelDataset};
use crate::regression::{
    absorbed_notes, drop_absorbed_covariates, first_differences, interaction_point,
    window_sample_filtered, RegressionFit, RegressionVariant,
};

#[derive(Debug, Clone)]
pub struct SaEstimate {
    /// Adoption period label of the cohort.
    pub adoption: i64,
    pub k: u32,
    pub s: u32,
    pub value: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

fn require_staggered(assign: &GroupAssignment) -> Result<()> {
    if assign.design() != Design::Staggered {
        return Err(Error::Misuse(
            "this estimator needs a staggered group assignment".into(),
        ));
    }
    Ok(())
}

/// Group split for one cohort and horizon: the cohort itself against
/// units still untreated through the horizon. Everything else is out.
fn cohort_level<'a>(
    assign: &'a GroupAssignment,
    t: usize,
    s: u32,
) -> impl Fn(usize) -> Option<bool> + 'a {
    move |u| match assign.adoption_index(u) {
        Some(a) if a == t => Some(true),
        Some(a) if a > t + s as usize => Some(false),
        None => Some(false),
        _ => None,
    }
}

/// Applies an operator to a cohort's cell means, attributing any missing
/// cell to the cohort (treated side) or to a missing clean-control pool.
fn eval_cells(
    data: &PanelDataset,
    cells: &CellMeans,
    op: &ResolvedOperator,
    t: usize,
    s: u32,
) -> Result<f64> {
    for &p in &op.periods {
        if cells.mean(true, p).is_none() {
            return Err(Error::EmptyCell {
                group: format!("cohort {}", data.time_label(t)),
                time: data.time_label(p),
            });
        }
        if cells.mean(false, p).is_none() {
            return Err(Error::NoCleanControl {
                t: data.time_label(t),
                s,
            });
        }
    }
    apply_operator(cells, op)
        .ok_or_else(|| Error::Internal("operator failed after cell check".into()))
}

/// Order-k lead-s estimate for one adoption cohort.
pub fn sa_component(
    data: &PanelDataset,
    assign: &GroupAssignment,
    adoption: i64,
    k: u32,
    s: u32,
) -> Result<SaEstimate> {
    require_staggered(assign)?;
    let t = data.time_index(adoption)?;
    if k == 0 {
        return Err(Error::Misuse("difference order must be at least 1".into()));
    }
    if k as usize > t {
        return Err(Error::Misuse(format!(
            "order {} needs {} pre-treatment periods but cohort {} has {}",
            k, k, adoption, t
        )));
    }
    if t + s as usize >= data.n_periods() {
        return Err(Error::Misuse(format!(
            "lead {} points past the last observed period for cohort {}",
            s, adoption
        )));
    }
    let table = CellTable::build(data, &cohort_level(assign, t, s));
    let cells = table.full();
    let op = kdid_coefficients(k, s).resolve(t, data.n_periods())?;
    let value = eval_cells(data, &cells, &op, t, s)?;
    let target = t + s as usize;
    let n_treated = cells.mean(true, target).map(|(_, n)| n as usize).unwrap_or(0);
    let n_control = cells.mean(false, target).map(|(_, n)| n as usize).unwrap_or(0);
    Ok(SaEstimate {
        adoption,
        k,
        s,
        value,
        n_treated,
        n_control,
    })
}

/// Adoption shares over the given cohorts, renormalized so they sum to
/// one even when other cohorts were dropped.
pub fn cohort_shares(
    data: &PanelDataset,
    assign: &GroupAssignment,
    cohorts: &[usize],
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0f64; cohorts.len()];
    for u in 0..data.n_units() {
        if let Some(a) = assign.adoption_index(u) {
            if let Some(ci) = cohorts.iter().position(|&t| t == a) {
                counts[ci] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Misuse("no units in the requested cohorts".into()));
    }
    Ok(counts.iter().map(|c| c / total).collect())
}

/// Battery of per-cohort components plus their share-weighted averages,
/// with shares recomputed on every draw. Layout: one block of `orders`
/// per cohort, then the averaged block.
struct SaBattery<'a> {
    data: &'a PanelDataset,
    cohorts: Vec<usize>,
    s: u32,
    tables: Vec<CellTable>,
    ops: Vec<Vec<ResolvedOperator>>,
    /// cohort_units[ci][cluster] = units of cohort ci in that cluster.
    cohort_units: Vec<Vec<f64>>,
    labels: Vec<String>,
    n_orders: usize,
}

impl<'a> SaBattery<'a> {
    fn shares(&self, mult: &[f64]) -> Result<Vec<f64>> {
        let counts: Vec<f64> = self
            .cohort_units
            .iter()
            .map(|per_cluster| {
                per_cluster
                    .iter()
                    .zip(mult)
                    .map(|(c, m)| c * m)
                    .sum::<f64>()
            })
            .collect();
        let total: f64 = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyCell {
                group: "treated".into(),
                time: self.data.time_label(self.cohorts[0]),
            });
        }
        Ok(counts.iter().map(|c| c / total).collect())
    }
}

impl<'a> Battery for SaBattery<'a> {
    fn len(&self) -> usize {
        (self.cohorts.len() + 1) * self.n_orders
    }

    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn eval(&self, draw: &[usize]) -> Result<Vec<f64>> {
        let kk = self.n_orders;
        let mut comp = vec![0.0f64; self.cohorts.len() * kk];
        for (ci, table) in self.tables.iter().enumerate() {
            let cells = table.aggregate(draw);
            for (ki, op) in self.ops[ci].iter().enumerate() {
                comp[ci * kk + ki] =
                    eval_cells(self.data, &cells, op, self.cohorts[ci], self.s)?;
            }
        }
        let mut mult = vec![0.0f64; self.data.n_clusters()];
        for &c in draw {
            mult[c] += 1.0;
        }
        let pi = self.shares(&mult)?;
        let mut out = comp.clone();
        for ki in 0..kk {
            let avg: f64 = (0..self.cohorts.len())
                .map(|ci| pi[ci] * comp[ci * kk + ki])
                .sum();
            out.push(avg);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SaCohortFit {
    pub adoption: i64,
    /// Share of treated units in this cohort, among kept cohorts.
    pub share: f64,
    pub components: Vec<f64>,
    pub result: GmmResult,
    pub se: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SaDoubleDidFit {
    pub orders: Vec<u32>,
    pub lead: u32,
    pub cohorts: Vec<SaCohortFit>,
    /// Cohorts left out, with the reason.
    pub dropped: Vec<(i64, String)>,
    /// Share-weighted averaged components, one per order.
    pub averaged: Vec<f64>,
    pub component_labels: Vec<String>,
    /// Bootstrap covariance of the averaged components.
    pub vcov: DMatrix<f64>,
    pub result: GmmResult,
    pub se: f64,
    pub notes: Vec<String>,
    pub redrawn: usize,
}

/// Share-weighted, bootstrap-combined effect for a staggered design.
///
/// Every usable cohort contributes each requested order; the averages are
/// taken inside each bootstrap replicate, with shares recomputed from the
/// drawn clusters, before the covariance and weights are estimated.
pub fn sa_double_did(
    data: &PanelDataset,
    assign: &GroupAssignment,
    opts: &DoubleDidOptions,
    boot: &BootstrapSpec,
) -> Result<SaDoubleDidFit> {
    require_staggered(assign)?;
    let s = opts.lead;
    let adoptions = assign.adoption_times();
    if adoptions.is_empty() {
        return Err(Error::Misuse("no treated cohorts in the data".into()));
    }
    let mut dropped: Vec<(i64, String)> = Vec::new();
    let mut candidates: Vec<usize> = Vec::new();
    for &t in &adoptions {
        if t == 0 {
            dropped.push((
                data.time_label(t),
                "no pre-treatment period before adoption".into(),
            ));
        } else if t + s as usize >= data.n_periods() {
            dropped.push((
                data.time_label(t),
                format!("lead {} points past the last observed period", s),
            ));
        } else {
            candidates.push(t);
        }
    }
    if candidates.is_empty() {
        return Err(Error::Misuse(
            "no cohort has both a pre-treatment period and the requested lead".into(),
        ));
    }
    let orders: Vec<u32> = match &opts.orders {
        Some(o) => {
            let mut o = o.clone();
            o.sort_unstable();
            o.dedup();
            if o.is_empty() || o[0] == 0 {
                return Err(Error::Misuse("difference orders must be at least 1".into()));
            }
            o
        }
        None => {
            let min_pre = *candidates.iter().min().unwrap();
            default_orders(opts.regime, min_pre, opts.max_order)?
        }
    };
    let kmax = *orders.iter().max().unwrap() as usize;

    let mut kept: Vec<usize> = Vec::new();
    let mut tables: Vec<CellTable> = Vec::new();
    let mut ops: Vec<Vec<ResolvedOperator>> = Vec::new();
    let mut components: Vec<Vec<f64>> = Vec::new();
    for &t in &candidates {
        if t < kmax {
            dropped.push((
                data.time_label(t),
                format!(
                    "only {} pre-treatment periods, order {} needs {}",
                    t, kmax, kmax
                ),
            ));
            continue;
        }
        let table = CellTable::build(data, &cohort_level(assign, t, s));
        let cells = table.full();
        let cohort_ops: Vec<ResolvedOperator> = orders
            .iter()
            .map(|&k| kdid_coefficients(k, s).resolve(t, data.n_periods()))
            .collect::<Result<_>>()?;
        let mut vals = Vec::with_capacity(cohort_ops.len());
        let mut fail: Option<Error> = None;
        for op in &cohort_ops {
            match eval_cells(data, &cells, op, t, s) {
                Ok(v) => vals.push(v),
                Err(e @ (Error::EmptyCell { .. } | Error::NoCleanControl { .. })) => {
                    fail = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = fail {
            dropped.push((data.time_label(t), e.to_string()));
            continue;
        }
        kept.push(t);
        tables.push(table);
        ops.push(cohort_ops);
        components.push(vals);
    }
    if kept.is_empty() {
        return Err(Error::Misuse(
            "no usable adoption cohort: all were dropped".into(),
        ));
    }

    // Per-cluster cohort unit counts drive the per-draw shares.
    let mut cohort_units = vec![vec![0.0f64; data.n_clusters()]; kept.len()];
    for u in 0..data.n_units() {
        if let Some(a) = assign.adoption_index(u) {
            if let Some(ci) = kept.iter().position(|&t| t == a) {
                cohort_units[ci][data.unit_cluster(u)] += 1.0;
            }
        }
    }
    let mut labels = Vec::new();
    for &t in &kept {
        for &k in &orders {
            labels.push(format!(
                "cohort[{}]/did[k={},s={}]",
                data.time_label(t),
                k,
                s
            ));
        }
    }
    let avg_labels: Vec<String> = orders
        .iter()
        .map(|&k| format!("avg/did[k={},s={}]", k, s))
        .collect();
    labels.extend(avg_labels.iter().cloned());

    let battery = SaBattery {
        data,
        cohorts: kept.clone(),
        s,
        tables,
        ops,
        cohort_units,
        labels,
        n_orders: orders.len(),
    };
    let run = bootstrap_vcov(data, &battery, boot)?;

    let pi = cohort_shares(data, assign, &kept)?;
    let kk = orders.len();
    let averaged: Vec<f64> = (0..kk)
        .map(|ki| {
            (0..kept.len())
                .map(|ci| pi[ci] * components[ci][ki])
                .sum()
        })
        .collect();
    let base = kept.len() * kk;
    let avg_vcov = run.vcov.view((base, base), (kk, kk)).into_owned();
    let combined = combine_estimated(&averaged, &avg_vcov)?;

    let mut cohort_fits = Vec::with_capacity(kept.len());
    for (ci, &t) in kept.iter().enumerate() {
        let v = run.vcov.view((ci * kk, ci * kk), (kk, kk)).into_owned();
        let co = combine_estimated(&components[ci], &v)?;
        cohort_fits.push(SaCohortFit {
            adoption: data.time_label(t),
            share: pi[ci],
            components: components[ci].clone(),
            result: co.result,
            se: co.se,
            notes: co.notes,
        });
    }
    let mut notes = combined.notes;
    for (label, why) in &dropped {
        notes.push(format!("dropped cohort {}: {}", label, why));
    }
    Ok(SaDoubleDidFit {
        orders,
        lead: s,
        cohorts: cohort_fits,
        dropped,
        averaged,
        component_labels: avg_labels,
        vcov: avg_vcov,
        result: combined.result,
        se: combined.se,
        notes,
        redrawn: run.redrawn,
    })
}

#[derive(Debug, Clone)]
pub struct SaPretrendGap {
    pub adoption: i64,
    /// How many periods before the usual placebo window this gap sits:
    /// gap 0 contrasts the two periods just before adoption.
    pub gap: u32,
    pub report: PretrendReport,
}

/// Placebo contrasts for one cohort at increasing distance before its
/// adoption, all against the cohort's clean controls, each standardized
/// by the control pool's earliest-period spread.
pub fn sa_pretrend(
    data: &PanelDataset,
    assign: &GroupAssignment,
    adoption: i64,
    depth: u32,
    boot: &BootstrapSpec,
    level: f64,
) -> Result<Vec<SaPretrendGap>> {
    require_staggered(assign)?;
    let t = data.time_index(adoption)?;
    if t < 2 {
        return Err(Error::Misuse(format!(
            "cohort {} needs two pre-treatment periods for a placebo contrast",
            adoption
        )));
    }
    let n_gaps = depth.min((t - 1) as u32);
    if n_gaps == 0 {
        return Err(Error::Misuse("placebo depth must be at least 1".into()));
    }
    let table = CellTable::build(data, &cohort_level(assign, t, 0));
    let gap_ops: Vec<ResolvedOperator> = (0..n_gaps)
        .map(|j| ResolvedOperator {
            periods: vec![t - 2 - j as usize, t - 1 - j as usize],
            coeffs: vec![-1.0, 1.0],
        })
        .collect();
    struct GapBattery<'a> {
        data: &'a PanelDataset,
        table: &'a CellTable,
        ops: &'a [ResolvedOperator],
        t: usize,
    }
    impl<'a> Battery for GapBattery<'a> {
        fn len(&self) -> usize {
            self.ops.len()
        }
        fn labels(&self) -> Vec<String> {
            (0..self.ops.len()).map(|j| format!("gap{}", j)).collect()
        }
        fn eval(&self, draw: &[usize]) -> Result<Vec<f64>> {
            let cells = self.table.aggregate(draw);
            self.ops
                .iter()
                .map(|op| eval_cells(self.data, &cells, op, self.t, 0))
                .collect()
        }
    }
    let battery = GapBattery {
        data,
        table: &table,
        ops: &gap_ops,
        t,
    };
    let full = battery.eval(&(0..data.n_clusters()).collect::<Vec<_>>())?;
    let run = bootstrap_vcov(data, &battery, boot)?;

    // Standardize by the clean-control pool at the earliest period.
    let level_fn = cohort_level(assign, t, 0);
    let mut values = Vec::new();
    for (r, &u) in data.row_unit().iter().enumerate() {
        if data.row_time()[r] == 0 && level_fn(u) == Some(false) {
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
    let sd = var.sqrt();
    if sd <= 0.0 {
        return Err(Error::Validation(
            "control outcomes have zero spread in the earliest period".into(),
        ));
    }

    let mut out = Vec::with_capacity(n_gaps as usize);
    for j in 0..n_gaps as usize {
        let point = full[j];
        let se = run.vcov[(j, j)].max(0.0).sqrt();
        let periods = gap_ops[j]
            .periods
            .iter()
            .map(|&p| data.time_label(p))
            .collect();
        out.push(SaPretrendGap {
            adoption,
            gap: j as u32,
            report: PretrendReport {
                order: 1,
                periods,
                point,
                se,
                p_value: normal_p_value(point, se),
                equivalence: equivalence_ci(point, se, Some(sd), level)?,
                baseline_mean: mean,
                baseline_sd: sd,
                n_boot: boot.replicates,
                redrawn: run.redrawn,
            },
        });
    }
    Ok(out)
}

/// Regression twin of the cohort components: an interaction model over
/// the cohort and its clean controls. The standard variant reproduces the
/// order-1 component, the sequential variant the order-2 component, both
/// at lead zero on balanced data.
pub fn sa_regression(
    data: &PanelDataset,
    assign: &GroupAssignment,
    adoption: i64,
    variant: RegressionVariant,
    covariates: bool,
) -> Result<RegressionFit> {
    require_staggered(assign)?;
    let t = data.time_index(adoption)?;
    let need = match variant {
        RegressionVariant::Standard => 1,
        RegressionVariant::Sequential => 2,
    };
    if t < need {
        return Err(Error::Misuse(format!(
            "cohort {} has {} pre-treatment periods but the {} model needs {}",
            adoption,
            t,
            variant.label(),
            need
        )));
    }
    let window: Vec<usize> = ((t - need)..=t).collect();
    let level_fn = cohort_level(assign, t, 0);
    let rows = window_sample_filtered(data, &window, covariates, &level_fn);
    if rows.is_empty() {
        return Err(Error::EmptyCell {
            group: format!("cohort {}", adoption),
            time: adoption,
        });
    }
    let cov_names = if covariates {
        data.covariate_names().to_vec()
    } else {
        Vec::new()
    };
    let w = vec![1.0; rows.len()];
    let last = window.len() - 1;
    match variant {
        RegressionVariant::Standard => {
            let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
            let point =
                interaction_point(&rows, &ys, &w, last - 1, last, cov_names.len(), &cov_names)?;
            Ok(RegressionFit {
                variant,
                point,
                terms: vec![("effect".to_string(), point)],
                n_rows: rows.len(),
                n_excluded: 0,
                notes: Vec::new(),
            })
        }
        RegressionVariant::Sequential => {
            let (mut rows2, dy, w2) = first_differences(&rows, &w);
            let eligible = rows.iter().filter(|r| r.t >= 1).count();
            let (names, absorbed) = drop_absorbed_covariates(&mut rows2, &cov_names);
            let point = interaction_point(&rows2, &dy, &w2, 1, 2, names.len(), &names)?;
            Ok(RegressionFit {
                variant,
                point,
                terms: vec![("effect".to_string(), point)],
                n_rows: rows2.len(),
                n_excluded: eligible - rows2.len(),
                notes: absorbed_notes(&absorbed),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::did_kdid;
    use crate::gmm::{double_did, Regime};
    use crate::panel::{assign_groups, DatasetMode, PanelBuilder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Five periods, adoption at 2 or 3 or never, with unit and period
    /// effects plus noise and a constant effect once treated.
    fn staggered_panel(seed: u64, noise: f64, effect: f64) -> PanelDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..30 {
            let a: Option<i64> = match u % 3 {
                0 => Some(2),
                1 => Some(3),
                _ => None,
            };
            let alpha: f64 = 0.05 * u as f64;
            for t in 0..5i64 {
                let on = a.is_some_and(|at| t >= at);
                let y = alpha
                    + 0.4 * t as f64
                    + noise * rng.gen_range(-1.0..1.0)
                    + if on { effect } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, on);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn single_cohort_component_matches_common_onset_estimator() {
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..20 {
            let g = u < 10;
            for t in 0..5i64 {
                let on = g && t >= 3;
                let y: f64 = rng.gen_range(-1.0..1.0) + if on { 0.8 } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, on);
            }
        }
        let data = b.build().unwrap();
        let basic = assign_groups(&data, Design::Basic).unwrap();
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        for (k, s) in [(1u32, 0u32), (2, 0), (3, 0), (2, 1), (1, 1)] {
            let a = did_kdid(&data, &basic, k, s).unwrap().value;
            let b = sa_component(&data, &sa, 3, k, s).unwrap().value;
            assert_eq!(a, b, "k={} s={}", k, s);
        }
    }

    #[test]
    fn component_by_hand_on_two_cohorts() {
        // Units: one adopting at 2, one at 3, one never. Outcomes chosen
        // so the cohort-2 contrast against clean controls is computable
        // by hand.
        let ys_a = [0.0, 1.0, 5.0, 6.0]; // adopts at t=2
        let ys_b = [0.5, 1.5, 2.5, 9.0]; // adopts at t=3
        let ys_c = [0.25, 1.25, 2.25, 3.25]; // never
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for (name, ys, a) in [
            ("a", &ys_a, Some(2i64)),
            ("b", &ys_b, Some(3)),
            ("c", &ys_c, None),
        ] {
            for (t, &y) in ys.iter().enumerate() {
                let on = a.is_some_and(|at| (t as i64) >= at);
                b = b.row(name, t as i64, y, on);
            }
        }
        let data = b.build().unwrap();
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        // Cohort 2 at s=0: controls are b (adopts later) and c.
        // Control means: t1 = (1.5+1.25)/2 = 1.375, t2 = (2.5+2.25)/2 = 2.375.
        // Contrast: (5 - 2.375) - (1 - 1.375) = 3.0.
        let est = sa_component(&data, &sa, 2, 1, 0).unwrap();
        assert!((est.value - 3.0).abs() < 1e-12);
        assert_eq!((est.n_treated, est.n_control), (1, 2));
        // At s=1 the horizon reaches t=3, so b is no longer clean and the
        // control pool is c alone: (6 - 3.25) - (1 - 1.25) = 3.0.
        let est = sa_component(&data, &sa, 2, 1, 1).unwrap();
        assert!((est.value - 3.0).abs() < 1e-12);
        assert_eq!((est.n_treated, est.n_control), (1, 1));
        // Cohort 3, order 2: only c is a clean control.
        // Treated double diff: (9 - 2.5) - (2.5 - 1.5) = 5.5;
        // control: (3.25 - 2.25) - (2.25 - 1.25) = 0. Value 5.5.
        let est = sa_component(&data, &sa, 3, 2, 0).unwrap();
        assert!((est.value - 5.5).abs() < 1e-12);
    }

    #[test]
    fn shares_count_units_and_renormalize() {
        let data = staggered_panel(1, 0.1, 0.5);
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let both = cohort_shares(&data, &sa, &[2, 3]).unwrap();
        assert!((both[0] - 0.5).abs() < 1e-12);
        assert!((both[1] - 0.5).abs() < 1e-12);
        let only = cohort_shares(&data, &sa, &[3]).unwrap();
        assert!((only[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_staggered_fit_recovers_the_effect() {
        let data = staggered_panel(2, 0.0, 0.7);
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let fit = sa_double_did(
            &data,
            &sa,
            &DoubleDidOptions::default(),
            &BootstrapSpec::new(50, 3),
        )
        .unwrap();
        // Both cohorts see the same constant effect and clean trends, so
        // every component and the average equal the effect exactly.
        assert_eq!(fit.orders, vec![1, 2]);
        assert!((fit.result.point - 0.7).abs() < 1e-12);
        for c in &fit.cohorts {
            assert!((c.result.point - 0.7).abs() < 1e-12, "cohort {}", c.adoption);
            for v in &c.components {
                assert!((v - 0.7).abs() < 1e-12);
            }
        }
        assert!((fit.cohorts[0].share - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noisy_staggered_fit_combines_averaged_components() {
        let data = staggered_panel(5, 0.6, 0.7);
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let fit = sa_double_did(
            &data,
            &sa,
            &DoubleDidOptions::default(),
            &BootstrapSpec::new(150, 3),
        )
        .unwrap();
        assert_eq!(fit.cohorts.len(), 2);
        let wsum: f64 = fit.result.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);
        // The point is the weighted average of the averaged components.
        let manual: f64 = fit
            .result
            .weights
            .iter()
            .zip(&fit.averaged)
            .map(|(w, c)| w * c)
            .sum();
        assert!((fit.result.point - manual).abs() < 1e-12);
        // The averaged components are the share-weighted cohort components.
        for ki in 0..fit.orders.len() {
            let avg: f64 = fit
                .cohorts
                .iter()
                .map(|c| c.share * c.components[ki])
                .sum();
            assert!((avg - fit.averaged[ki]).abs() < 1e-12);
        }
    }

    #[test]
    fn short_cohorts_are_dropped_with_a_reason() {
        // Adoption at 1 leaves one pre-period, too few for order 2.
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..12 {
            let a: Option<i64> = match u % 3 {
                0 => Some(1),
                1 => Some(3),
                _ => None,
            };
            for t in 0..5i64 {
                let on = a.is_some_and(|at| t >= at);
                let y = 0.2 * t as f64 + 0.01 * u as f64 + if on { 0.5 } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, on);
            }
        }
        let data = b.build().unwrap();
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let opts = DoubleDidOptions {
            orders: Some(vec![2]),
            regime: Regime::TrendsInTrends,
            ..DoubleDidOptions::default()
        };
        let fit = sa_double_did(&data, &sa, &opts, &BootstrapSpec::new(40, 8)).unwrap();
        assert_eq!(fit.cohorts.len(), 1);
        assert_eq!(fit.cohorts[0].adoption, 3);
        assert!((fit.cohorts[0].share - 1.0).abs() < 1e-12);
        assert_eq!(fit.dropped.len(), 1);
        assert_eq!(fit.dropped[0].0, 1);
        assert!(fit.dropped[0].1.contains("pre-treatment"), "{}", fit.dropped[0].1);
    }

    #[test]
    fn parallel_paths_give_zero_placebo_gaps() {
        let data = staggered_panel(6, 0.0, 0.9);
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let gaps = sa_pretrend(&data, &sa, 3, 5, &BootstrapSpec::new(30, 2), 0.95).unwrap();
        // Cohort 3 has three pre-periods, so gaps 0 and 1 exist.
        assert_eq!(gaps.len(), 2);
        for g in &gaps {
            assert!(g.report.point.abs() < 1e-12);
            assert!(g.report.equivalence.bound.abs() < 1e-12);
        }
        assert_eq!(gaps[0].report.periods, vec![1, 2]);
        assert_eq!(gaps[1].report.periods, vec![0, 1]);
    }

    #[test]
    fn regression_twins_match_components_without_covariates() {
        let data = staggered_panel(9, 0.5, 0.7);
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        for adoption in [2i64, 3] {
            let std = sa_regression(&data, &sa, adoption, RegressionVariant::Standard, false)
                .unwrap();
            let c1 = sa_component(&data, &sa, adoption, 1, 0).unwrap();
            assert!(
                (std.point - c1.value).abs() < 1e-10,
                "standard {} vs {}",
                std.point,
                c1.value
            );
            let seq = sa_regression(&data, &sa, adoption, RegressionVariant::Sequential, false)
                .unwrap();
            let c2 = sa_component(&data, &sa, adoption, 2, 0).unwrap();
            assert!(
                (seq.point - c2.value).abs() < 1e-10,
                "sequential {} vs {}",
                seq.point,
                c2.value
            );
        }
    }

    #[test]
    fn single_cohort_double_did_reduces_to_the_basic_fit() {
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..24 {
            let g = u < 12;
            for t in 0..4i64 {
                let on = g && t >= 2;
                let y: f64 =
                    0.3 * t as f64 + rng.gen_range(-0.8..0.8) + if on { 0.6 } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, on);
            }
        }
        let data = b.build().unwrap();
        let basic = assign_groups(&data, Design::Basic).unwrap();
        let sa = assign_groups(&data, Design::Staggered).unwrap();
        let boot = BootstrapSpec::new(120, 17);
        let a = double_did(&data, &basic, &DoubleDidOptions::default(), &boot).unwrap();
        let b = sa_double_did(&data, &sa, &DoubleDidOptions::default(), &boot).unwrap();
        assert_eq!(a.result.point, b.result.point);
        assert_eq!(a.se, b.se);
        assert_eq!(a.components, b.averaged);
        assert_eq!(a.result.weights, b.result.weights);
    }
}
