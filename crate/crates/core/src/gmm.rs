//! Weighted combination of difference-in-differences moments.
//!
//! Given component estimates that all target the same effect, the combined
//! estimate minimizes the quadratic form (tau*1 - est)' W (tau*1 - est).
//! The minimizer is a weighted average with weights W*1 / (1'W1), so any
//! symmetric W with nonzero total defines a combination; the inverse of
//! the bootstrap covariance is the efficient choice and the only one whose
//! variance is reported via (1'W1)^-1.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimators::did_kdid;
use crate::inference::{bootstrap_vcov, Battery, BootstrapSpec, OperatorBattery};
use crate::panel::{GroupAssignment, PanelDataset};

/// Condition-number ceiling before a covariance is treated as singular.
const COND_LIMIT: f64 = 1e8;

/// Component estimates and onsets are equal within this before the
/// combination short-circuits to the shared value.
const CONSENSUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// Weight on the one-back contrast only.
    Standard,
    /// Mixes the contrast and the double difference 3:-1, reproducing the
    /// average-baseline estimator.
    Extended,
    /// Weight on the double difference only.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightProvenance {
    Preset(PresetKind),
    /// Inverse of an estimated covariance; enables variance reporting.
    EstimatedOptimal,
    /// Inverse variances only, used when the covariance is near singular.
    DiagonalFallback,
    Custom,
}

#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub w: DMatrix<f64>,
    pub provenance: WeightProvenance,
}

impl WeightMatrix {
    pub fn custom(w: DMatrix<f64>) -> Result<WeightMatrix> {
        validate_symmetric(&w)?;
        Ok(WeightMatrix {
            w,
            provenance: WeightProvenance::Custom,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

fn validate_symmetric(w: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != w.ncols() || w.nrows() == 0 {
        return Err(Error::Misuse(format!(
            "weight matrix must be square and nonempty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let scale = w.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    for i in 0..w.nrows() {
        for j in (i + 1)..w.ncols() {
            if (w[(i, j)] - w[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Misuse("weight matrix must be symmetric".into()));
            }
        }
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Misuse("weight matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Two-moment preset weight matrices over (one-back contrast, double
/// difference).
pub fn preset(kind: PresetKind) -> WeightMatrix {
    let w = match kind {
        PresetKind::Standard => DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        PresetKind::Extended => DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]),
        PresetKind::Sequential => DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
    };
    WeightMatrix {
        w,
        provenance: WeightProvenance::Preset(kind),
    }
}

#[derive(Debug, Clone)]
pub struct GmmResult {
    pub point: f64,
    /// Normalized component weights W*1 / (1'W1); they sum to one and may
    /// be negative.
    pub weights: Vec<f64>,
    /// (1'W1)^-1, reported only when W is the estimated-optimal inverse
    /// covariance.
    pub variance: Option<f64>,
    /// Objective value at the minimizer under the estimated-optimal W;
    /// asymptotically chi-squared with (moments - 1) degrees of freedom.
    pub j_stat: Option<f64>,
    pub weight_matrix: WeightMatrix,
}

/// Minimizes the quadratic form over the common effect.
pub fn gmm_combine(moments: &[f64], weight: &WeightMatrix) -> Result<GmmResult> {
    validate_symmetric(&weight.w)?;
    let k = weight.dim();
    if moments.len() != k {
        return Err(Error::Misuse(format!(
            "{} moments but a {}x{} weight matrix",
            moments.len(),
            k,
            k
        )));
    }
    if moments.iter().any(|m| !m.is_finite()) {
        return Err(Error::Validation("non-finite component estimate".into()));
    }
    let row_sums: Vec<f64> = (0..k).map(|i| weight.w.row(i).sum()).collect();
    let denom: f64 = row_sums.iter().sum();
    if denom.abs() <= 1e-12 {
        return Err(Error::DegenerateWeights { denom });
    }
    let point = row_sums
        .iter()
        .zip(moments)
        .map(|(r, m)| r * m)
        .sum::<f64>()
        / denom;
    let weights: Vec<f64> = row_sums.iter().map(|r| r / denom).collect();
    let (variance, j_stat) = if weight.provenance == WeightProvenance::EstimatedOptimal {
        let g: Vec<f64> = moments.iter().map(|m| point - m).collect();
        let mut j = 0.0;
        for i in 0..k {
            for jx in 0..k {
                j += g[i] * weight.w[(i, jx)] * g[jx];
            }
        }
        (Some(1.0 / denom), Some(j))
    } else {
        (None, None)
    };
    Ok(GmmResult {
        point,
        weights,
        variance,
        j_stat,
        weight_matrix: weight.clone(),
    })
}

/// Inverts a covariance matrix into the efficient weight. Rejects
/// non-positive-definite or badly conditioned inputs so the caller can
/// fall back explicitly.
pub fn optimal_weight(vcov: &DMatrix<f64>) -> Result<WeightMatrix> {
    validate_symmetric(vcov)?;
    let eig = SymmetricEigen::new(vcov.clone());
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        min_eig = min_eig.min(l);
        max_eig = max_eig.max(l);
    }
    if min_eig <= 0.0 {
        return Err(Error::NearSingularVcov {
            cond: f64::INFINITY,
            min_eig,
        });
    }
    let cond = max_eig / min_eig;
    if cond > COND_LIMIT {
        return Err(Error::NearSingularVcov { cond, min_eig });
    }
    let q = &eig.eigenvectors;
    let inv_l = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let mut w = q * inv_l * q.transpose();
    // Symmetrize away rounding noise from the reconstruction.
    for i in 0..w.nrows() {
        for j in (i + 1)..w.ncols() {
            let avg = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = avg;
            w[(j, i)] = avg;
        }
    }
    Ok(WeightMatrix {
        w,
        provenance: WeightProvenance::EstimatedOptimal,
    })
}

/// Ignores covariances and weights each moment by its inverse variance.
pub fn diagonal_fallback(vcov: &DMatrix<f64>) -> Result<WeightMatrix> {
    validate_symmetric(vcov)?;
    let mut w = DMatrix::zeros(vcov.nrows(), vcov.ncols());
    for i in 0..vcov.nrows() {
        let v = vcov[(i, i)];
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NearSingularVcov {
                cond: f64::INFINITY,
                min_eig: v,
            });
        }
        w[(i, i)] = 1.0 / v;
    }
    Ok(WeightMatrix {
        w,
        provenance: WeightProvenance::DiagonalFallback,
    })
}

/// Which identifying assumption the default moment set encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Group gaps are flat on average: orders 1..K all identify the
    /// effect, including the plain contrast.
    ExtendedParallel,
    /// Group gaps move linearly: the plain contrast is biased, so only
    /// orders 2..K enter.
    TrendsInTrends,
}

#[derive(Debug, Clone)]
pub struct DoubleDidOptions {
    pub regime: Regime,
    /// Explicit difference orders; overrides the regime default.
    pub orders: Option<Vec<u32>>,
    /// Lead s of the targeted post-treatment period.
    pub lead: u32,
    /// Cap on the default order range.
    pub max_order: Option<u32>,
}

impl Default for DoubleDidOptions {
    fn default() -> Self {
        DoubleDidOptions {
            regime: Regime::ExtendedParallel,
            orders: None,
            lead: 0,
            max_order: None,
        }
    }
}

/// Default moment orders for a design with `pre_periods` usable
/// pre-treatment periods.
pub fn default_orders(
    regime: Regime,
    pre_periods: usize,
    max_order: Option<u32>,
) -> Result<Vec<u32>> {
    let mut cap = pre_periods as u32;
    if let Some(m) = max_order {
        cap = cap.min(m);
    }
    let lo = match regime {
        Regime::ExtendedParallel => 1,
        Regime::TrendsInTrends => 2,
    };
    if cap < lo {
        return Err(Error::Misuse(format!(
            "this assumption regime needs at least {} pre-treatment periods, data has {}",
            lo, pre_periods
        )));
    }
    Ok((lo..=cap).collect())
}

#[derive(Debug, Clone)]
pub struct DoubleDidFit {
    pub orders: Vec<u32>,
    pub lead: u32,
    pub component_labels: Vec<String>,
    pub components: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub result: GmmResult,
    /// Plug-in standard error sqrt(w' vcov w); equals the reported
    /// combination variance under the estimated-optimal weight.
    pub se: f64,
    pub notes: Vec<String>,
    pub redrawn: usize,
}

#[derive(Debug, Clone)]
pub struct CombineOutcome {
    pub result: GmmResult,
    pub se: f64,
    pub notes: Vec<String>,
}

/// Combines component estimates using the inverse of their estimated
/// covariance. Falls back to inverse-variance weights when the covariance
/// is near singular, and short-circuits to the shared value when the
/// components already agree exactly, which happens on noiseless data where
/// the covariance is identically zero.
pub fn combine_estimated(components: &[f64], vcov: &DMatrix<f64>) -> Result<CombineOutcome> {
    if vcov.nrows() != components.len() {
        return Err(Error::Misuse(format!(
            "{} components but a {}x{} covariance",
            components.len(),
            vcov.nrows(),
            vcov.ncols()
        )));
    }
    let spread = components.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - components.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut notes = Vec::new();
    let weight = match optimal_weight(vcov) {
        Ok(w) => w,
        Err(Error::NearSingularVcov { cond, min_eig }) => {
            if spread.abs() <= CONSENSUS_TOL {
                let k = components.len();
                notes.push(
                    "component estimates agree exactly; combination weights are moot".into(),
                );
                let result = GmmResult {
                    point: components[0],
                    weights: vec![1.0 / k as f64; k],
                    variance: None,
                    j_stat: None,
                    weight_matrix: WeightMatrix {
                        w: DMatrix::identity(k, k),
                        provenance: WeightProvenance::Custom,
                    },
                };
                return Ok(CombineOutcome {
                    result,
                    se: 0.0,
                    notes,
                });
            }
            notes.push(format!(
                "bootstrap covariance is near singular (condition {:.3e}, min eigenvalue \
                 {:.3e}); falling back to inverse-variance weights",
                cond, min_eig
            ));
            diagonal_fallback(vcov)?
        }
        Err(e) => return Err(e),
    };
    let result = gmm_combine(components, &weight)?;
    let wvec = nalgebra::DVector::from_vec(result.weights.clone());
    let se = (wvec.transpose() * vcov * &wvec)[(0, 0)].max(0.0).sqrt();
    Ok(CombineOutcome { result, se, notes })
}

/// Combines the order-k moments with weights estimated from a cluster
/// bootstrap of the full component vector.
pub fn double_did(
    data: &PanelDataset,
    assign: &GroupAssignment,
    opts: &DoubleDidOptions,
    boot: &BootstrapSpec,
) -> Result<DoubleDidFit> {
    let t_star = assign
        .onset_index()
        .ok_or_else(|| Error::Misuse("combined estimation needs a single-onset design".into()))?;
    let orders = match &opts.orders {
        Some(o) => {
            let mut o = o.clone();
            o.sort_unstable();
            o.dedup();
            if o.is_empty() {
                return Err(Error::Misuse("no difference orders given".into()));
            }
            for &k in &o {
                if k == 0 || k as usize > t_star {
                    return Err(Error::Misuse(format!(
                        "order {} is outside the usable range 1..={}",
                        k, t_star
                    )));
                }
            }
            o
        }
        None => default_orders(opts.regime, t_star, opts.max_order)?,
    };

    let mut components = Vec::with_capacity(orders.len());
    for &k in &orders {
        components.push(did_kdid(data, assign, k, opts.lead)?.value);
    }
    let battery = OperatorBattery::for_orders(data, assign, &orders, opts.lead)?;
    let labels = battery.labels();
    let run = bootstrap_vcov(data, &battery, boot)?;
    let combined = combine_estimated(&components, &run.vcov)?;
    Ok(DoubleDidFit {
        orders,
        lead: opts.lead,
        component_labels: labels,
        components,
        vcov: run.vcov,
        result: combined.result,
        se: combined.se,
        notes: combined.notes,
        redrawn: run.redrawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{assign_groups, DatasetMode, Design, PanelBuilder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn presets_match_their_matrices() {
        assert_eq!(
            preset(PresetKind::Standard).w.as_slice(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        let e = preset(PresetKind::Extended).w;
        assert_eq!(e[(0, 0)], 3.0);
        assert_eq!(e[(1, 1)], -1.0);
        assert_eq!((e[(0, 1)], e[(1, 0)]), (0.0, 0.0));
        let s = preset(PresetKind::Sequential).w;
        assert_eq!((s[(0, 0)], s[(1, 1)]), (0.0, 1.0));
    }

    #[test]
    fn preset_combinations_reproduce_named_estimators() {
        // Components (contrast, double difference) from the worked paths
        // example: 1.0 and 0.5.
        let moments = [1.0, 0.5];
        let std = gmm_combine(&moments, &preset(PresetKind::Standard)).unwrap();
        assert_eq!(std.point, 1.0);
        assert_eq!(std.weights, vec![1.0, 0.0]);
        let ext = gmm_combine(&moments, &preset(PresetKind::Extended)).unwrap();
        assert!((ext.point - 1.25).abs() < 1e-15);
        assert_eq!(ext.weights, vec![1.5, -0.5]);
        let seq = gmm_combine(&moments, &preset(PresetKind::Sequential)).unwrap();
        assert_eq!(seq.point, 0.5);
        assert!(std.variance.is_none() && ext.variance.is_none());
    }

    #[test]
    fn optimal_weight_on_diagonal_covariance() {
        let vcov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let w = optimal_weight(&vcov).unwrap();
        assert!((w.w[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((w.w[(1, 1)] - 0.5).abs() < 1e-12);
        let res = gmm_combine(&[1.0, 1.0], &w).unwrap();
        assert!((res.variance.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((res.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((res.weights[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_moment_weights_match_the_explicit_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(0.2..3.0);
            let b: f64 = rng.gen_range(0.2..3.0);
            let c: f64 = rng.gen_range(-1.0..1.0) * (a * b).sqrt() * 0.9;
            let vcov = DMatrix::from_row_slice(2, 2, &[a, c, c, b]);
            let w = match optimal_weight(&vcov) {
                Ok(w) => w,
                Err(_) => continue,
            };
            let m = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let res = gmm_combine(&m, &w).unwrap();
            let denom = a + b - 2.0 * c;
            let w1 = (b - c) / denom;
            let w2 = (a - c) / denom;
            assert!((res.weights[0] - w1).abs() < 1e-9, "w1 {} vs {}", res.weights[0], w1);
            assert!((res.weights[1] - w2).abs() < 1e-9);
            let var = (a * b - c * c) / denom;
            assert!((res.variance.unwrap() - var).abs() < 1e-9);
            assert!((res.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_grid_minimum_and_j_stat() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        for _ in 0..20 {
            let k = rng.gen_range(2..5usize);
            // Random PD covariance via A'A + eps*I.
            let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
            let vcov = &a.transpose() * &a + DMatrix::identity(k, k) * 0.05;
            let w = optimal_weight(&vcov).unwrap();
            let m: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let res = gmm_combine(&m, &w).unwrap();
            let objective = |tau: f64| {
                let g: Vec<f64> = m.iter().map(|x| tau - x).collect();
                let mut o = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        o += g[i] * w.w[(i, j)] * g[j];
                    }
                }
                o
            };
            assert!((objective(res.point) - res.j_stat.unwrap()).abs() < 1e-12);
            let mut grid_min = f64::INFINITY;
            for step in 0..=4000 {
                let tau = res.point - 2.0 + step as f64 * 0.001;
                grid_min = grid_min.min(objective(tau));
            }
            assert!(objective(res.point) <= grid_min + 1e-10);
        }
    }

    #[test]
    fn degenerate_weight_total_is_rejected() {
        let w = WeightMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .unwrap();
        let err = gmm_combine(&[1.0, 2.0], &w).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights { .. }), "{}", err);
    }

    #[test]
    fn near_singular_covariance_is_rejected_then_recovered_diagonally() {
        let vcov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 - 1e-12, 1.0 - 1e-12, 1.0]);
        let err = optimal_weight(&vcov).unwrap_err();
        assert!(matches!(err, Error::NearSingularVcov { .. }), "{}", err);
        let w = diagonal_fallback(&vcov).unwrap();
        assert_eq!(w.provenance, WeightProvenance::DiagonalFallback);
        let res = gmm_combine(&[2.0, 4.0], &w).unwrap();
        assert!((res.point - 3.0).abs() < 1e-12);
        assert!(res.variance.is_none(), "fallback must not report the optimal variance");
    }

    #[test]
    fn optimal_variance_never_exceeds_preset_plugins() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(0.2..3.0);
            let b: f64 = rng.gen_range(0.2..3.0);
            let c: f64 = rng.gen_range(-0.9..0.9) * (a * b).sqrt();
            let vcov = DMatrix::from_row_slice(2, 2, &[a, c, c, b]);
            let opt = match optimal_weight(&vcov) {
                Ok(w) => w,
                Err(_) => continue,
            };
            let best = gmm_combine(&[0.0, 0.0], &opt).unwrap().variance.unwrap();
            for kind in [PresetKind::Standard, PresetKind::Extended, PresetKind::Sequential] {
                let res = gmm_combine(&[0.0, 0.0], &preset(kind)).unwrap();
                let wv = nalgebra::DVector::from_vec(res.weights);
                let plug = (wv.transpose() * &vcov * &wv)[(0, 0)];
                assert!(
                    best <= plug + 1e-12,
                    "optimal {} beat by {:?} at {}",
                    best,
                    kind,
                    plug
                );
            }
        }
    }

    fn noisy_panel(seed: u64, t_len: usize) -> crate::panel::PanelDataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..40 {
            let g = u < 20;
            for t in 0..t_len {
                let y = 0.3 * t as f64
                    + if g { 0.1 } else { 0.0 }
                    + rng.gen_range(-0.5..0.5)
                    + if g && t == t_len - 1 { 1.0 } else { 0.0 };
                b = b.row(&format!("u{}", u), t as i64, y, g && t == t_len - 1);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn trends_in_trends_with_two_pre_periods_is_the_double_difference() {
        let data = noisy_panel(3, 3);
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let opts = DoubleDidOptions {
            regime: Regime::TrendsInTrends,
            ..DoubleDidOptions::default()
        };
        let fit = double_did(&data, &assign, &opts, &BootstrapSpec::new(80, 4)).unwrap();
        assert_eq!(fit.orders, vec![2]);
        let seq = crate::estimators::did_sequential(&data, &assign, None).unwrap();
        assert!((fit.result.point - seq.value).abs() < 1e-12);
        assert_eq!(fit.result.weights, vec![1.0]);
    }

    #[test]
    fn extended_regime_combines_both_orders_with_unit_sum_weights() {
        let data = noisy_panel(8, 3);
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let fit = double_did(
            &data,
            &assign,
            &DoubleDidOptions::default(),
            &BootstrapSpec::new(200, 4),
        )
        .unwrap();
        assert_eq!(fit.orders, vec![1, 2]);
        assert!((fit.result.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // The point is the weighted average of the components.
        let manual: f64 = fit
            .result
            .weights
            .iter()
            .zip(&fit.components)
            .map(|(w, c)| w * c)
            .sum();
        assert!((fit.result.point - manual).abs() < 1e-12);
        assert!(fit.result.variance.is_some());
        assert!((fit.se * fit.se - fit.result.variance.unwrap()).abs() < 1e-12);
        assert!(fit.result.j_stat.is_some());
    }

    #[test]
    fn noiseless_components_agree_and_short_circuit() {
        // No noise: both moments equal the effect exactly, the bootstrap
        // covariance is all zeros, and the fit returns the consensus.
        let mut b = PanelBuilder::new(DatasetMode::Panel);
        for u in 0..8 {
            let g = u < 4;
            for t in 0..3 {
                let y = 0.5 * t as f64 + if g && t == 2 { 0.7 } else { 0.0 };
                b = b.row(&format!("u{}", u), t, y, g && t == 2);
            }
        }
        let data = b.build().unwrap();
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let fit = double_did(
            &data,
            &assign,
            &DoubleDidOptions::default(),
            &BootstrapSpec::new(40, 9),
        )
        .unwrap();
        assert!((fit.result.point - 0.7).abs() < 1e-12);
        assert!(!fit.notes.is_empty());
        assert!(fit.result.variance.is_none());
    }
}
