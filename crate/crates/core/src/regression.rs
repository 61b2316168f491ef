//! Regression counterparts of the cell-mean estimators.
//!
//! Every estimator in this crate is a linear functional of group-by-period
//! cell means, and each one has a regression twin: a pooled interaction
//! model, a two-way fixed-effects fit, a transformed-outcome model, or a
//! group-trends model. [`oracle_pair`] computes both sides of each
//! identity independently so tests can assert they agree to near machine
//! precision; [`did_regression`] is the user-facing path, which also
//! accepts covariate columns.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{did_extended, did_pretrend, did_sequential, did_standard};
use crate::gmm::{combine_estimated, CombineOutcome};
use crate::inference::{bootstrap_vcov, BootstrapSpec, ClosureBattery};
use crate::panel::{DatasetMode, GroupAssignment, GroupSel, PanelDataset};

/// Diagonal entries of R below this fraction of the leading entry count
/// as zero when ranking a design matrix.
const RANK_TOL: f64 = 1e-10;

/// Weighted least squares via column-pivoted QR. Weights multiply squared
/// residuals, so a weight of 2 is identical to repeating the row twice.
/// Rank deficiency is an error naming the redundant columns rather than a
/// silent drop.
pub fn wls_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    names: &[String],
) -> Result<DVector<f64>> {
    let (m, n) = x.shape();
    if y.len() != m {
        return Err(Error::Misuse(format!(
            "design has {} rows but the response has {}",
            m,
            y.len()
        )));
    }
    if names.len() != n {
        return Err(Error::Internal(format!(
            "{} column names for {} columns",
            names.len(),
            n
        )));
    }
    if m < n {
        return Err(Error::RankDeficient {
            terms: names.to_vec(),
        });
    }
    let (xs, ys) = match weights {
        Some(w) => {
            if w.len() != m {
                return Err(Error::Misuse(format!(
                    "{} weights for {} rows",
                    w.len(),
                    m
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(
                    "row weights must be finite and nonnegative".into(),
                ));
            }
            let mut xs = x.clone();
            let mut ys = y.clone();
            for i in 0..m {
                let s = w[i].sqrt();
                for j in 0..n {
                    xs[(i, j)] *= s;
                }
                ys[i] *= s;
            }
            (xs, ys)
        }
        None => (x.clone(), y.clone()),
    };
    let qr = xs.col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let tol = RANK_TOL * lead.max(f64::MIN_POSITIVE);
    let rank = (0..n).take_while(|&i| r[(i, i)].abs() > tol).count();
    if rank < n {
        // Map pivoted positions back to original column names; the columns
        // beyond the detected rank are the redundant ones.
        let mut idx = DVector::from_iterator(n, 0..n);
        qr.p().permute_rows(&mut idx);
        let mut terms: Vec<String> = (rank..n).map(|j| names[idx[j]].clone()).collect();
        terms.sort();
        return Err(Error::RankDeficient { terms });
    }
    let q = qr.q();
    let c = q.transpose() * ys;
    let mut z = r
        .rows(0, n)
        .solve_upper_triangular(&c.rows(0, n))
        .ok_or_else(|| Error::Internal("triangular solve failed after rank check".into()))?;
    qr.p().inv_permute_rows(&mut z);
    Ok(z)
}

/// One regression observation inside an estimation window. `t` indexes
/// the position within the window, not the global period.
#[derive(Clone)]
pub(crate) struct SampleRow {
    pub(crate) unit: usize,
    pub(crate) cluster: usize,
    pub(crate) t: usize,
    pub(crate) g: bool,
    pub(crate) y: f64,
    pub(crate) cov: Vec<f64>,
}

fn onset_index(assign: &GroupAssignment) -> Result<usize> {
    assign.onset_index().ok_or_else(|| {
        Error::Misuse(
            "regression estimators need a single shared onset; staggered data goes through \
             the staggered interface"
                .into(),
        )
    })
}

/// Collects the rows whose period falls in `window`, tagging each with its
/// window position and group. Units mapped to `None` are left out.
pub(crate) fn window_sample_filtered(
    data: &PanelDataset,
    window: &[usize],
    covariates: bool,
    group: &dyn Fn(usize) -> Option<bool>,
) -> Vec<SampleRow> {
    let pos: HashMap<usize, usize> = window.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let units = data.row_unit();
    let times = data.row_time();
    let clusters = data.row_cluster();
    let mut out = Vec::new();
    for (r, obs) in data.rows().iter().enumerate() {
        let g = match group(units[r]) {
            Some(g) => g,
            None => continue,
        };
        if let Some(&t) = pos.get(&times[r]) {
            out.push(SampleRow {
                unit: units[r],
                cluster: clusters[r],
                t,
                g,
                y: obs.outcome,
                cov: if covariates {
                    obs.covariates.clone()
                } else {
                    Vec::new()
                },
            });
        }
    }
    out
}

fn window_sample(
    data: &PanelDataset,
    assign: &GroupAssignment,
    window: &[usize],
    covariates: bool,
) -> Vec<SampleRow> {
    window_sample_filtered(data, window, covariates, &|u| {
        Some(assign.in_treated_group(u))
    })
}

/// Errors with the first empty group-by-period cell among `positions`, so
/// bootstrap draws that lose a cell are redrawn like their cell-mean
/// counterparts.
fn require_cells(
    data: &PanelDataset,
    window: &[usize],
    positions: &[usize],
    rows: &[SampleRow],
    w: &[f64],
) -> Result<()> {
    for &t in positions {
        for g in [true, false] {
            let total: f64 = rows
                .iter()
                .zip(w)
                .filter(|(r, _)| r.t == t && r.g == g)
                .map(|(_, w)| *w)
                .sum();
            if total <= 0.0 {
                return Err(Error::EmptyCell {
                    group: if g { "treated" } else { "control" }.to_string(),
                    time: data.time_label(window[t]),
                });
            }
        }
    }
    Ok(())
}

/// Interaction-model point estimate: regress the outcome on an intercept,
/// the group flag, a dummy for the later period, and their product, plus
/// any covariates; the product coefficient is the estimate.
pub(crate) fn interaction_point(
    rows: &[SampleRow],
    ys: &[f64],
    w: &[f64],
    base_t: usize,
    post_t: usize,
    n_cov: usize,
    cov_names: &[String],
) -> Result<f64> {
    let keep: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.t == base_t || r.t == post_t)
        .map(|(i, _)| i)
        .collect();
    let ncols = 4 + n_cov;
    let mut x = DMatrix::zeros(keep.len(), ncols);
    let mut yv = DVector::zeros(keep.len());
    let mut wv = Vec::with_capacity(keep.len());
    for (row_i, &i) in keep.iter().enumerate() {
        let r = &rows[i];
        let post = if r.t == post_t { 1.0 } else { 0.0 };
        let g = if r.g { 1.0 } else { 0.0 };
        x[(row_i, 0)] = 1.0;
        x[(row_i, 1)] = g;
        x[(row_i, 2)] = post;
        x[(row_i, 3)] = g * post;
        for c in 0..n_cov {
            x[(row_i, 4 + c)] = r.cov[c];
        }
        yv[row_i] = ys[i];
        wv.push(w[i]);
    }
    let mut names = vec![
        "const".to_string(),
        "group".to_string(),
        "post".to_string(),
        "effect".to_string(),
    ];
    names.extend(cov_names.iter().cloned());
    let beta = wls_solve(&x, &yv, Some(&wv), &names)?;
    Ok(beta[3])
}

/// The named regression identities. Each pairs a regression coefficient
/// with the cell-mean estimator it reproduces on clean data: pooled models
/// hold for arbitrary cell counts, fixed-effects and unit-trend models
/// need a balanced panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleId {
    /// Pooled two-period interaction model vs the plain contrast.
    StandardInteraction,
    /// Two-period fixed-effects fit vs the plain contrast.
    StandardTwfe,
    /// Pooled three-period model with one post dummy vs the cell-count
    /// weighted blend of the two baseline contrasts.
    ExtendedCellWeighted,
    /// Three-period fixed-effects fit vs the average-baseline estimator.
    ExtendedTwfe,
    /// Interaction model on group-mean-differenced outcomes vs the double
    /// difference.
    SequentialTransformedRcs,
    /// Interaction model on first-differenced outcomes vs the double
    /// difference.
    SequentialTransformedPanel,
    /// Group-specific linear trends plus period effects vs the double
    /// difference.
    SequentialGroupTrends,
    /// Unit intercepts and unit linear trends vs the double difference.
    SequentialUnitTrends,
    /// Pre-period interaction model vs the one-step pre-trend contrast.
    LeadsPretrend,
}

impl OracleId {
    pub const ALL: [OracleId; 9] = [
        OracleId::StandardInteraction,
        OracleId::StandardTwfe,
        OracleId::ExtendedCellWeighted,
        OracleId::ExtendedTwfe,
        OracleId::SequentialTransformedRcs,
        OracleId::SequentialTransformedPanel,
        OracleId::SequentialGroupTrends,
        OracleId::SequentialUnitTrends,
        OracleId::LeadsPretrend,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OracleId::StandardInteraction => "standard-interaction",
            OracleId::StandardTwfe => "standard-twfe",
            OracleId::ExtendedCellWeighted => "extended-cell-weighted",
            OracleId::ExtendedTwfe => "extended-twfe",
            OracleId::SequentialTransformedRcs => "sequential-transformed-rcs",
            OracleId::SequentialTransformedPanel => "sequential-transformed-panel",
            OracleId::SequentialGroupTrends => "sequential-group-trends",
            OracleId::SequentialUnitTrends => "sequential-unit-trends",
            OracleId::LeadsPretrend => "leads-pretrend",
        }
    }

    /// Identities that difference within units or absorb unit effects;
    /// they hold exactly only on balanced panel data.
    pub fn needs_panel(self) -> bool {
        matches!(
            self,
            OracleId::StandardTwfe
                | OracleId::ExtendedTwfe
                | OracleId::SequentialTransformedPanel
                | OracleId::SequentialUnitTrends
        )
    }
}

/// Computes one identity's two sides: the regression coefficient and the
/// matching cell-mean estimate.
pub fn oracle_pair(
    data: &PanelDataset,
    assign: &GroupAssignment,
    id: OracleId,
) -> Result<(f64, f64)> {
    let t_star = onset_index(assign)?;
    if id.needs_panel() && data.mode() != DatasetMode::Panel {
        return Err(Error::Misuse(format!(
            "{} differencing needs panel data",
            id.label()
        )));
    }
    let needs3 = !matches!(id, OracleId::StandardInteraction | OracleId::StandardTwfe);
    if t_star < if needs3 { 2 } else { 1 } {
        return Err(Error::Misuse(format!(
            "{} needs {} pre-treatment periods",
            id.label(),
            if needs3 { 2 } else { 1 }
        )));
    }
    let window: Vec<usize> = if needs3 {
        vec![t_star - 2, t_star - 1, t_star]
    } else {
        vec![t_star - 1, t_star]
    };
    let rows = window_sample(data, assign, &window, false);
    let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let w = vec![1.0; rows.len()];
    let labels: Vec<i64> = window.iter().map(|&p| data.time_label(p)).collect();
    let last = window.len() - 1;

    match id {
        OracleId::StandardInteraction => {
            let reg = interaction_point(&rows, &ys, &w, 0, 1, 0, &[])?;
            let formula = did_standard(data, assign, Some((labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::StandardTwfe => {
            let reg = twfe_point(&rows, &ys, &w, &[1], last)?;
            let formula = did_standard(data, assign, Some((labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::ExtendedCellWeighted => {
            // Pooled model with both pre-periods as the baseline: an
            // intercept, group, free period effects, and a single
            // group-by-post product.
            let n = rows.len();
            let mut x = DMatrix::zeros(n, 5);
            let mut yv = DVector::zeros(n);
            for (i, r) in rows.iter().enumerate() {
                let g = if r.g { 1.0 } else { 0.0 };
                x[(i, 0)] = 1.0;
                x[(i, 1)] = g;
                x[(i, 2)] = if r.t == 1 { 1.0 } else { 0.0 };
                x[(i, 3)] = if r.t == 2 { 1.0 } else { 0.0 };
                x[(i, 4)] = g * if r.t == 2 { 1.0 } else { 0.0 };
                yv[i] = r.y;
            }
            let names: Vec<String> = ["const", "group", "mid", "post", "effect"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let reg = wls_solve(&x, &yv, None, &names)?[4];
            // The same coefficient as a blend of the two baseline
            // contrasts, weighted by pre-period cell counts.
            let count = |g: bool, t: usize| -> Result<f64> {
                let sel = GroupSel::Basic { assign, treated: g };
                Ok(data.cell_mean(&sel, labels[t])?.1 as f64)
            };
            let (n10, n00) = (count(true, 0)?, count(false, 0)?);
            let (n11, n01) = (count(true, 1)?, count(false, 1)?);
            let a = n11 * n01 * (n10 + n00);
            let b = n10 * n00 * (n11 + n01);
            let lambda = a / (a + b);
            let one_back = did_standard(data, assign, Some((labels[2], labels[1])))?.value;
            let two_back = did_standard(data, assign, Some((labels[2], labels[0])))?.value;
            let formula = lambda * one_back + (1.0 - lambda) * two_back;
            Ok((reg, formula))
        }
        OracleId::ExtendedTwfe => {
            let reg = twfe_point(&rows, &ys, &w, &[1, 2], last)?;
            let formula =
                did_extended(data, assign, Some((labels[2], labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::SequentialTransformedRcs => {
            let (rows2, dy, w2) = group_mean_differences(data, &window, &rows, &w)?;
            let reg = interaction_point(&rows2, &dy, &w2, 1, 2, 0, &[])?;
            let formula =
                did_sequential(data, assign, Some((labels[2], labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::SequentialTransformedPanel => {
            let (rows2, dy, w2) = first_differences(&rows, &w);
            let reg = interaction_point(&rows2, &dy, &w2, 1, 2, 0, &[])?;
            let formula =
                did_sequential(data, assign, Some((labels[2], labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::SequentialGroupTrends => {
            // No intercept: the three period effects span it. The group
            // trend uses window positions 0, 1, 2 as the clock.
            let n = rows.len();
            let mut x = DMatrix::zeros(n, 6);
            let mut yv = DVector::zeros(n);
            for (i, r) in rows.iter().enumerate() {
                let g = if r.g { 1.0 } else { 0.0 };
                x[(i, 0)] = g;
                x[(i, 1)] = g * r.t as f64;
                x[(i, 2)] = if r.t == 0 { 1.0 } else { 0.0 };
                x[(i, 3)] = if r.t == 1 { 1.0 } else { 0.0 };
                x[(i, 4)] = if r.t == 2 { 1.0 } else { 0.0 };
                x[(i, 5)] = g * if r.t == 2 { 1.0 } else { 0.0 };
                yv[i] = r.y;
            }
            let names: Vec<String> =
                ["group", "group-trend", "p0", "p1", "p2", "effect"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
            let reg = wls_solve(&x, &yv, None, &names)?[5];
            let formula =
                did_sequential(data, assign, Some((labels[2], labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::SequentialUnitTrends => {
            let reg = unit_trend_point(&rows)?;
            let formula =
                did_sequential(data, assign, Some((labels[2], labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
        OracleId::LeadsPretrend => {
            // Regression over the two pre-periods only; its interaction
            // coefficient is the placebo contrast.
            let reg = interaction_point(&rows, &ys, &w, 0, 1, 0, &[])?;
            let formula = did_pretrend(data, assign, Some((labels[1], labels[0])))?.value;
            Ok((reg, formula))
        }
    }
}

/// Fixed-effects point estimate via explicit unit dummies, period dummies
/// for `period_ts` (window positions past the base), and the treatment
/// product for the final position.
fn twfe_point(
    rows: &[SampleRow],
    ys: &[f64],
    w: &[f64],
    period_ts: &[usize],
    post_t: usize,
) -> Result<f64> {
    let mut unit_pos: HashMap<usize, usize> = HashMap::new();
    for r in rows {
        let next = unit_pos.len();
        unit_pos.entry(r.unit).or_insert(next);
    }
    let n_units = unit_pos.len();
    let ncols = n_units + period_ts.len() + 1;
    let mut x = DMatrix::zeros(rows.len(), ncols);
    let mut yv = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        x[(i, unit_pos[&r.unit])] = 1.0;
        for (j, &pt) in period_ts.iter().enumerate() {
            if r.t == pt {
                x[(i, n_units + j)] = 1.0;
            }
        }
        if r.g && r.t == post_t {
            x[(i, ncols - 1)] = 1.0;
        }
        yv[i] = ys[i];
    }
    let mut names: Vec<String> = (0..n_units).map(|u| format!("unit{}", u)).collect();
    names.extend(period_ts.iter().map(|t| format!("period{}", t)));
    names.push("effect".to_string());
    let beta = wls_solve(&x, &yv, Some(w), &names)?;
    Ok(beta[ncols - 1])
}

/// Point estimate with unit intercepts and unit-specific linear trends.
/// Both the constant and the linear clock lie in the span of the unit
/// blocks, so the period effects reduce to a single final-period dummy.
fn unit_trend_point(rows: &[SampleRow]) -> Result<f64> {
    let mut unit_pos: HashMap<usize, usize> = HashMap::new();
    for r in rows {
        let next = unit_pos.len();
        unit_pos.entry(r.unit).or_insert(next);
    }
    let n_units = unit_pos.len();
    let ncols = 2 * n_units + 2;
    let mut x = DMatrix::zeros(rows.len(), ncols);
    let mut yv = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let u = unit_pos[&r.unit];
        x[(i, u)] = 1.0;
        x[(i, n_units + u)] = r.t as f64;
        if r.t == 2 {
            x[(i, 2 * n_units)] = 1.0;
            if r.g {
                x[(i, 2 * n_units + 1)] = 1.0;
            }
        }
        yv[i] = r.y;
    }
    let mut names: Vec<String> = (0..n_units).map(|u| format!("unit{}", u)).collect();
    names.extend((0..n_units).map(|u| format!("trend{}", u)));
    names.push("final-period".to_string());
    names.push("effect".to_string());
    let beta = wls_solve(&x, &yv, None, &names)?;
    Ok(beta[ncols - 1])
}

/// RCS transformation: each window-1/2 outcome minus its own group's
/// weighted mean at the previous window position.
fn group_mean_differences(
    data: &PanelDataset,
    window: &[usize],
    rows: &[SampleRow],
    w: &[f64],
) -> Result<(Vec<SampleRow>, Vec<f64>, Vec<f64>)> {
    let mut sums = [[0.0f64; 2]; 2];
    let mut wts = [[0.0f64; 2]; 2];
    for (r, &wi) in rows.iter().zip(w) {
        if r.t < 2 {
            let gi = r.g as usize;
            sums[gi][r.t] += wi * r.y;
            wts[gi][r.t] += wi;
        }
    }
    for t in 0..2 {
        for g in [false, true] {
            if wts[g as usize][t] <= 0.0 {
                return Err(Error::EmptyCell {
                    group: if g { "treated" } else { "control" }.to_string(),
                    time: data.time_label(window[t]),
                });
            }
        }
    }
    let mean = |g: bool, t: usize| sums[g as usize][t] / wts[g as usize][t];
    let mut out_rows = Vec::new();
    let mut dy = Vec::new();
    let mut ow = Vec::new();
    for (r, &wi) in rows.iter().zip(w) {
        if r.t >= 1 {
            out_rows.push(r.clone());
            dy.push(r.y - mean(r.g, r.t - 1));
            ow.push(wi);
        }
    }
    Ok((out_rows, dy, ow))
}

/// Panel transformation: each window-1/2 outcome minus the same unit's
/// outcome one window position earlier. Rows without a lag are dropped.
pub(crate) fn first_differences(
    rows: &[SampleRow],
    w: &[f64],
) -> (Vec<SampleRow>, Vec<f64>, Vec<f64>) {
    let mut lag: HashMap<(usize, usize), (f64, &[f64])> = HashMap::new();
    for r in rows {
        lag.insert((r.unit, r.t), (r.y, &r.cov));
    }
    let mut out_rows = Vec::new();
    let mut dy = Vec::new();
    let mut ow = Vec::new();
    for (r, &wi) in rows.iter().zip(w) {
        if r.t >= 1 {
            if let Some((prev_y, prev_cov)) = lag.get(&(r.unit, r.t - 1)) {
                let mut nr = r.clone();
                // Covariates are differenced alongside the outcome so the
                // transformed model stays internally consistent.
                nr.cov = r
                    .cov
                    .iter()
                    .zip(prev_cov.iter())
                    .map(|(a, b)| a - b)
                    .collect();
                out_rows.push(nr);
                dy.push(r.y - prev_y);
                ow.push(wi);
            }
        }
    }
    (out_rows, dy, ow)
}

/// Removes covariate columns that are exactly zero in every transformed
/// row. A time-invariant covariate differences away entirely; its additive
/// effect is already controlled by the transformation, so keeping the
/// zero column would only trip the rank check. Returns the kept and the
/// absorbed names.
pub(crate) fn drop_absorbed_covariates(
    rows: &mut [SampleRow],
    names: &[String],
) -> (Vec<String>, Vec<String>) {
    if names.is_empty() || rows.is_empty() {
        return (names.to_vec(), Vec::new());
    }
    let absorbed_mask: Vec<bool> = (0..names.len())
        .map(|j| rows.iter().all(|r| r.cov[j] == 0.0))
        .collect();
    if !absorbed_mask.iter().any(|&a| a) {
        return (names.to_vec(), Vec::new());
    }
    for r in rows.iter_mut() {
        r.cov = r
            .cov
            .iter()
            .zip(&absorbed_mask)
            .filter(|(_, &a)| !a)
            .map(|(v, _)| *v)
            .collect();
    }
    let mut kept = Vec::new();
    let mut absorbed = Vec::new();
    for (name, &a) in names.iter().zip(&absorbed_mask) {
        if a {
            absorbed.push(name.clone());
        } else {
            kept.push(name.clone());
        }
    }
    (kept, absorbed)
}

pub(crate) fn absorbed_notes(absorbed: &[String]) -> Vec<String> {
    absorbed
        .iter()
        .map(|n| {
            format!(
                "covariate {} differenced to zero and was dropped; the transformation \
                 already absorbs its additive effect",
                n
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionVariant {
    /// Two-period interaction model targeting the plain contrast.
    Standard,
    /// Transformed-outcome model targeting the double difference: first
    /// differences on panel data, group-mean differences on repeated
    /// cross sections.
    Sequential,
}

impl RegressionVariant {
    pub fn label(self) -> &'static str {
        match self {
            RegressionVariant::Standard => "standard-regression",
            RegressionVariant::Sequential => "sequential-regression",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub variant: RegressionVariant,
    pub point: f64,
    /// Coefficients of interest by name.
    pub terms: Vec<(String, f64)>,
    pub n_rows: usize,
    /// Rows dropped because differencing had no lag to subtract.
    pub n_excluded: usize,
    /// Adjustments made along the way, e.g. absorbed covariates.
    pub notes: Vec<String>,
}

/// Shared state for regression fits that must be recomputable on
/// bootstrap draws: the window rows plus per-draw cluster weighting.
struct RegressionProblem<'a> {
    data: &'a PanelDataset,
    window: Vec<usize>,
    rows: Vec<SampleRow>,
    n_cov: usize,
    cov_names: Vec<String>,
}

impl<'a> RegressionProblem<'a> {
    fn new(
        data: &'a PanelDataset,
        assign: &GroupAssignment,
        covariates: bool,
    ) -> Result<RegressionProblem<'a>> {
        let t_star = onset_index(assign)?;
        if t_star < 1 {
            return Err(Error::Misuse("no pre-treatment period".into()));
        }
        // Take three periods when available so the sequential transform
        // has a lag for the first regression period.
        let window: Vec<usize> = if t_star >= 2 {
            vec![t_star - 2, t_star - 1, t_star]
        } else {
            vec![t_star - 1, t_star]
        };
        let rows = window_sample(data, assign, &window, covariates);
        let cov_names = if covariates {
            data.covariate_names().to_vec()
        } else {
            Vec::new()
        };
        Ok(RegressionProblem {
            data,
            window,
            rows,
            n_cov: cov_names.len(),
            cov_names,
        })
    }

    fn weights_for(&self, draw: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0f64; self.data.n_clusters()];
        for &c in draw {
            counts[c] += 1.0;
        }
        self.rows.iter().map(|r| counts[r.cluster]).collect()
    }

    fn unit_weights(&self) -> Vec<f64> {
        vec![1.0; self.rows.len()]
    }

    fn standard_point(&self, w: &[f64]) -> Result<f64> {
        let last = self.window.len() - 1;
        require_cells(
            self.data,
            &self.window,
            &[last - 1, last],
            &self.rows,
            w,
        )?;
        let ys: Vec<f64> = self.rows.iter().map(|r| r.y).collect();
        interaction_point(
            &self.rows,
            &ys,
            w,
            last - 1,
            last,
            self.n_cov,
            &self.cov_names,
        )
    }

    fn sequential_point(&self, w: &[f64]) -> Result<(f64, usize, Vec<String>)> {
        if self.window.len() < 3 {
            return Err(Error::Misuse(
                "the sequential transform needs two pre-treatment periods".into(),
            ));
        }
        let (mut rows2, dy, w2) = match self.data.mode() {
            DatasetMode::RepeatedCrossSection => {
                group_mean_differences(self.data, &self.window, &self.rows, w)?
            }
            DatasetMode::Panel => first_differences(&self.rows, w),
        };
        let kept = rows2.len();
        let eligible = self.rows.iter().filter(|r| r.t >= 1).count();
        require_cells(self.data, &self.window, &[1, 2], &rows2, &w2)?;
        let (names, absorbed) = drop_absorbed_covariates(&mut rows2, &self.cov_names);
        let point = interaction_point(&rows2, &dy, &w2, 1, 2, names.len(), &names)?;
        Ok((point, eligible - kept, absorbed))
    }
}

/// Regression estimate of the treatment effect, optionally adjusting for
/// the dataset's covariate columns. Without covariates the point matches
/// the corresponding cell-mean estimator on clean data.
pub fn did_regression(
    data: &PanelDataset,
    assign: &GroupAssignment,
    variant: RegressionVariant,
    covariates: bool,
) -> Result<RegressionFit> {
    let prob = RegressionProblem::new(data, assign, covariates)?;
    let w = prob.unit_weights();
    match variant {
        RegressionVariant::Standard => {
            let point = prob.standard_point(&w)?;
            Ok(RegressionFit {
                variant,
                point,
                terms: vec![("effect".to_string(), point)],
                n_rows: prob
                    .rows
                    .iter()
                    .filter(|r| r.t >= prob.window.len() - 2)
                    .count(),
                n_excluded: 0,
                notes: Vec::new(),
            })
        }
        RegressionVariant::Sequential => {
            let (point, excluded, absorbed) = prob.sequential_point(&w)?;
            Ok(RegressionFit {
                variant,
                point,
                terms: vec![("effect".to_string(), point)],
                n_rows: prob.rows.iter().filter(|r| r.t >= 1).count() - excluded,
                n_excluded: excluded,
                notes: absorbed_notes(&absorbed),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionDoubleDid {
    pub component_labels: Vec<String>,
    pub components: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub combined: CombineOutcome,
    /// Covariates dropped from the differenced model because the
    /// transformation zeroed them out.
    pub absorbed: Vec<String>,
    pub redrawn: usize,
}

/// Combines the standard and sequential regression points with weights
/// from a cluster bootstrap, mirroring the cell-mean combination but open
/// to covariate adjustment.
pub fn double_did_regression(
    data: &PanelDataset,
    assign: &GroupAssignment,
    covariates: bool,
    boot: &BootstrapSpec,
) -> Result<RegressionDoubleDid> {
    let prob = RegressionProblem::new(data, assign, covariates)?;
    let full = prob.unit_weights();
    let (seq_point, _, absorbed) = prob.sequential_point(&full)?;
    let components = vec![prob.standard_point(&full)?, seq_point];
    let battery = ClosureBattery::new()
        .push("standard-regression", |draw: &[usize]| {
            prob.standard_point(&prob.weights_for(draw))
        })
        .push("sequential-regression", |draw: &[usize]| {
            Ok(prob.sequential_point(&prob.weights_for(draw))?.0)
        });
    let run = bootstrap_vcov(data, &battery, boot)?;
    let combined = combine_estimated(&components, &run.vcov)?;
    Ok(RegressionDoubleDid {
        component_labels: vec![
            "standard-regression".to_string(),
            "sequential-regression".to_string(),
        ],
        components,
        vcov: run.vcov,
        combined,
        absorbed,
        redrawn: run.redrawn,
    })
}
