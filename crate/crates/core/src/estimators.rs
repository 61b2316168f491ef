//! Difference-in-differences estimators over group-period cell means.
//!
//! Every estimator here is a linear functional of the (group, period) cell
//! means: the standard two-period contrast, the extended average of two
//! baselines, the sequential double difference, and the k-th order family
//! that generalizes them. The k-th order operator is materialized as an
//! explicit coefficient vector so callers can re-evaluate it cheaply under
//! cluster resampling.

use crate::error::{Error, Result};
use crate::panel::{CellMeans, CellTable, GroupAssignment, PanelDataset};

/// Point estimate together with the periods and cell sizes it used.
#[derive(Debug, Clone)]
pub struct DidEstimate {
    pub value: f64,
    /// Original period labels, ascending; the last one is the target.
    pub periods: Vec<i64>,
    pub n_treated: Vec<usize>,
    pub n_control: Vec<usize>,
}

/// Difference operator of order `k` at lead `s`, expanded to coefficients
/// on onset-relative periods. `offsets` is ascending `[-k, ..., -1, s]`;
/// the coefficient on the target `+s` is 1 and the coefficients sum to 0,
/// so constants cancel. Applied to the treated-minus-control mean gap, the
/// operator annihilates polynomial gaps of degree k-1.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceOperatorSpec {
    pub k: u32,
    pub s: u32,
    pub offsets: Vec<i64>,
    pub coeffs: Vec<f64>,
}

/// Operator with offsets resolved to internal period indices.
#[derive(Debug, Clone)]
pub struct ResolvedOperator {
    pub periods: Vec<usize>,
    pub coeffs: Vec<f64>,
}

/// Lead-dependent scale attached to the level-`l` pre-trend correction:
/// the product of (s+1)...(s+l-1) over (l-1)!. Equals 1 whenever s = 0.
pub fn m_coefficient(level: u32, s: u32) -> f64 {
    let mut num = 1.0;
    let mut den = 1.0;
    for j in 1..level {
        num *= (s + j) as f64;
        den *= j as f64;
    }
    num / den
}

/// Expands the order-k lead-s operator into cell-mean coefficients.
///
/// The recursion subtracts scaled backward differences of the last
/// pre-treatment mean: the target keeps coefficient 1 and each correction
/// level j contributes its m-coefficient times the j-th backward
/// difference at the period just before onset.
pub fn kdid_coefficients(k: u32, s: u32) -> DifferenceOperatorSpec {
    assert!(k >= 1, "difference order must be at least 1");
    // pre[m-1] accumulates the coefficient on the mean at offset -m.
    let mut pre = vec![0.0f64; k as usize];
    pre[0] = -1.0;
    // diff[i] is the coefficient on offset -(1+i) in the j-th backward
    // difference of the pre-onset mean, built up iteratively.
    let mut diff = vec![0.0f64; k as usize + 1];
    diff[0] = 1.0;
    for j in 1..k {
        // Backward difference: subtract the same coefficients shifted one
        // period earlier.
        for i in (1..=j as usize).rev() {
            diff[i] -= diff[i - 1];
        }
        let m = m_coefficient(j + 1, s);
        for i in 0..=j as usize {
            pre[i] -= m * diff[i];
        }
    }
    let mut offsets: Vec<i64> = (1..=k as i64).map(|m| -m).collect();
    offsets.reverse();
    let mut coeffs: Vec<f64> = pre;
    coeffs.reverse();
    offsets.push(s as i64);
    coeffs.push(1.0);
    DifferenceOperatorSpec {
        k,
        s,
        offsets,
        coeffs,
    }
}

impl DifferenceOperatorSpec {
    /// Maps onset-relative offsets onto period indices around `target`.
    pub fn resolve(&self, target: usize, n_periods: usize) -> Result<ResolvedOperator> {
        let mut periods = Vec::with_capacity(self.offsets.len());
        for &off in &self.offsets {
            let idx = target as i64 + off;
            if idx < 0 || idx as usize >= n_periods {
                return Err(Error::Misuse(format!(
                    "order-{} operator at lead {} needs period offset {} from the onset, which \
                     falls outside the observed range",
                    self.k, self.s, off
                )));
            }
            periods.push(idx as usize);
        }
        Ok(ResolvedOperator {
            periods,
            coeffs: self.coeffs.clone(),
        })
    }
}

/// Applies a resolved operator to the treated-minus-control mean gap.
/// `None` when a required cell is empty.
pub(crate) fn apply_operator(cells: &CellMeans, op: &ResolvedOperator) -> Option<f64> {
    let mut acc = 0.0;
    for (&t, &c) in op.periods.iter().zip(&op.coeffs) {
        let (m1, _) = cells.mean(true, t)?;
        let (m0, _) = cells.mean(false, t)?;
        acc += c * (m1 - m0);
    }
    Some(acc)
}

/// Cell table for the two-group design.
pub fn basic_cells(data: &PanelDataset, assign: &GroupAssignment) -> CellTable {
    CellTable::build(data, &|u| Some(assign.in_treated_group(u)))
}

fn gap_at(
    data: &PanelDataset,
    cells: &CellMeans,
    t: usize,
) -> Result<(f64, usize, usize)> {
    let (m1, n1) = cells.mean(true, t).ok_or_else(|| Error::EmptyCell {
        group: "treated".into(),
        time: data.time_label(t),
    })?;
    let (m0, n0) = cells.mean(false, t).ok_or_else(|| Error::EmptyCell {
        group: "control".into(),
        time: data.time_label(t),
    })?;
    Ok((m1 - m0, n1 as usize, n0 as usize))
}

fn estimate_from_gaps(
    data: &PanelDataset,
    cells: &CellMeans,
    periods: &[usize],
    coeffs: &[f64],
) -> Result<DidEstimate> {
    let mut value = 0.0;
    let mut labels = Vec::with_capacity(periods.len());
    let mut n_treated = Vec::with_capacity(periods.len());
    let mut n_control = Vec::with_capacity(periods.len());
    for (&t, &c) in periods.iter().zip(coeffs) {
        let (gap, n1, n0) = gap_at(data, cells, t)?;
        value += c * gap;
        labels.push(data.time_label(t));
        n_treated.push(n1);
        n_control.push(n0);
    }
    Ok(DidEstimate {
        value,
        periods: labels,
        n_treated,
        n_control,
    })
}

fn onset_index(data: &PanelDataset, assign: &GroupAssignment) -> Result<usize> {
    let idx = assign.onset_index().ok_or_else(|| {
        Error::Misuse(
            "this estimator needs a single-onset design; staggered data goes through the \
             staggered-adoption interface"
                .into(),
        )
    })?;
    if idx >= data.n_periods() {
        return Err(Error::Misuse("onset lies after the last observed period".into()));
    }
    Ok(idx)
}

/// Standard two-period contrast: the post-minus-pre change of the treated
/// group minus the same change for controls.
pub fn did_standard(
    data: &PanelDataset,
    assign: &GroupAssignment,
    periods: Option<(i64, i64)>,
) -> Result<DidEstimate> {
    let (post, pre) = match periods {
        Some(p) => (data.time_index(p.0)?, data.time_index(p.1)?),
        None => {
            let t_star = onset_index(data, assign)?;
            if t_star == 0 {
                return Err(Error::Misuse("no pre-treatment period before the onset".into()));
            }
            (t_star, t_star - 1)
        }
    };
    if post <= pre {
        return Err(Error::Misuse(
            "the first period argument must come after the second".into(),
        ));
    }
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &[pre, post], &[-1.0, 1.0])
}

/// Average of the one-back and two-back contrasts; equals the two-way
/// fixed-effects coefficient on a balanced three-period panel.
pub fn did_extended(
    data: &PanelDataset,
    assign: &GroupAssignment,
    periods: Option<(i64, i64, i64)>,
) -> Result<DidEstimate> {
    let (t2, t1, t0) = resolve_triple(data, assign, periods)?;
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &[t0, t1, t2], &[-0.5, -0.5, 1.0])
}

/// Double difference: the post-vs-last-pre contrast minus the contrast of
/// the two pre-periods. Unbiased when the group gap moves linearly.
pub fn did_sequential(
    data: &PanelDataset,
    assign: &GroupAssignment,
    periods: Option<(i64, i64, i64)>,
) -> Result<DidEstimate> {
    let (t2, t1, t0) = resolve_triple(data, assign, periods)?;
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &[t0, t1, t2], &[1.0, -2.0, 1.0])
}

fn resolve_triple(
    data: &PanelDataset,
    assign: &GroupAssignment,
    periods: Option<(i64, i64, i64)>,
) -> Result<(usize, usize, usize)> {
    let (t2, t1, t0) = match periods {
        Some(p) => (
            data.time_index(p.0)?,
            data.time_index(p.1)?,
            data.time_index(p.2)?,
        ),
        None => {
            let t_star = onset_index(data, assign)?;
            if t_star < 2 {
                return Err(Error::Misuse(
                    "need two pre-treatment periods before the onset".into(),
                ));
            }
            (t_star, t_star - 1, t_star - 2)
        }
    };
    if !(t2 > t1 && t1 > t0) {
        return Err(Error::Misuse("periods must be given in descending order".into()));
    }
    Ok((t2, t1, t0))
}

/// Placebo contrast on two pre-treatment periods.
pub fn did_pretrend(
    data: &PanelDataset,
    assign: &GroupAssignment,
    periods: Option<(i64, i64)>,
) -> Result<DidEstimate> {
    let t_star = onset_index(data, assign)?;
    let (t1, t0) = match periods {
        Some(p) => (data.time_index(p.0)?, data.time_index(p.1)?),
        None => {
            if t_star < 2 {
                return Err(Error::Misuse(
                    "need two pre-treatment periods before the onset".into(),
                ));
            }
            (t_star - 1, t_star - 2)
        }
    };
    if t1 >= t_star || t0 >= t_star {
        return Err(Error::Misuse(format!(
            "pre-trend test periods must precede the onset {}",
            data.time_label(t_star)
        )));
    }
    if t1 <= t0 {
        return Err(Error::Misuse(
            "the first period argument must come after the second".into(),
        ));
    }
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &[t0, t1], &[-1.0, 1.0])
}

/// Extended contrast using every pre-treatment period as the baseline:
/// the post-period gap minus the average of all pre-period gaps. With two
/// pre-periods this is [`did_extended`]; on a balanced panel of any depth
/// it equals the two-way fixed-effects fit with a single post indicator,
/// and it averages the one-back contrasts taken against each pre-period.
pub fn did_extended_all(data: &PanelDataset, assign: &GroupAssignment) -> Result<DidEstimate> {
    let t_star = onset_index(data, assign)?;
    if t_star < 1 {
        return Err(Error::Misuse("no pre-treatment period before the onset".into()));
    }
    let mut periods: Vec<usize> = (0..t_star).collect();
    let mut coeffs = vec![-1.0 / t_star as f64; t_star];
    periods.push(t_star);
    coeffs.push(1.0);
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &periods, &coeffs)
}

/// Order-k lead-s estimator. Order 1 at lead 0 is the standard contrast,
/// order 2 the sequential one; higher orders strip higher-degree trends in
/// the group gap at the cost of using deeper pre-treatment history.
pub fn did_kdid(
    data: &PanelDataset,
    assign: &GroupAssignment,
    k: u32,
    s: u32,
) -> Result<DidEstimate> {
    let t_star = onset_index(data, assign)?;
    if k == 0 {
        return Err(Error::Misuse("difference order must be at least 1".into()));
    }
    if (k as usize) > t_star {
        return Err(Error::Misuse(format!(
            "order {} needs {} pre-treatment periods, but only {} precede the onset",
            k, k, t_star
        )));
    }
    let spec = kdid_coefficients(k, s);
    let op = spec.resolve(t_star, data.n_periods())?;
    let cells = basic_cells(data, assign).full();
    estimate_from_gaps(data, &cells, &op.periods, &op.coeffs)
}
