//! Randomized invariants: properties that must hold for every input, not
//! just the worked examples.

mod common;

use doubledid::estimators::{did_kdid, did_standard, kdid_coefficients};
use doubledid::gmm::{gmm_combine, optimal_weight};
use doubledid::inference::equivalence_ci;
use doubledid::panel::{
    assign_groups, load_csv_reader, write_csv, CsvSchema, DatasetMode, Design, PanelBuilder,
    PanelDataset,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Rebuilds the dataset with every outcome mapped through y -> a*y + b.
fn affine(data: &PanelDataset, a: f64, b: f64) -> PanelDataset {
    let mut builder = PanelBuilder::new(DatasetMode::Panel);
    for row in data.rows() {
        builder = builder.row(&row.unit, row.time, a * row.outcome + b, row.treated);
    }
    builder.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The contrasts are linear in the outcome: shifting every outcome
    /// cancels out and scaling passes straight through.
    #[test]
    fn contrasts_commute_with_affine_outcome_maps(
        seed in 0u64..10_000,
        half_units in 3usize..8,
        n_periods in 3usize..6,
        a in 0.1f64..3.0,
        b in -5.0f64..5.0,
    ) {
        let onset = n_periods - 1;
        let data = common::balanced_panel(seed, 2 * half_units, n_periods, onset);
        let mapped = affine(&data, a, b);
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let assign_mapped = assign_groups(&mapped, Design::Basic).unwrap();

        let max_k = (onset as u32).min(3);
        for k in 1..=max_k {
            let orig = did_kdid(&data, &assign, k, 0).unwrap().value;
            let got = did_kdid(&mapped, &assign_mapped, k, 0).unwrap().value;
            let scale = 1.0 + orig.abs();
            prop_assert!(
                (got - a * orig).abs() / scale < 1e-10,
                "k={}: {} vs {}", k, got, a * orig
            );
        }
    }

    /// Combination weights always sum to one, and the closed-form point
    /// is never beaten by a grid scan of the quadratic objective.
    #[test]
    fn combination_weights_stay_on_the_simplex_plane(
        a11 in -1.0f64..1.0, a12 in -1.0f64..1.0,
        a21 in -1.0f64..1.0, a22 in -1.0f64..1.0,
        m1 in -2.0f64..2.0, m2 in -2.0f64..2.0,
    ) {
        let a = DMatrix::from_row_slice(2, 2, &[a11, a12, a21, a22]);
        let vcov = &a.transpose() * &a + DMatrix::identity(2, 2) * 0.05;
        let w = optimal_weight(&vcov).unwrap();
        let res = gmm_combine(&[m1, m2], &w).unwrap();

        let sum: f64 = res.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "weights sum to {}", sum);

        let objective = |tau: f64| {
            let g = DVector::from_vec(vec![tau - m1, tau - m2]);
            (g.transpose() * w.w.clone() * g)[(0, 0)]
        };
        let lo = m1.min(m2) - 1.0;
        let hi = m1.max(m2) + 1.0;
        let grid_min = (0..=200)
            .map(|i| objective(lo + (hi - lo) * i as f64 / 200.0))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(objective(res.point) <= grid_min + 1e-10);
    }

    /// Writing a dataset to CSV and reading it back preserves every row.
    #[test]
    fn csv_round_trip_preserves_every_observation(
        seed in 0u64..10_000,
        half_units in 2usize..6,
        n_periods in 2usize..6,
    ) {
        let data = common::balanced_panel(seed, 2 * half_units, n_periods, n_periods - 1);
        let mut buf = Vec::new();
        buf = write_csv(&data, buf).unwrap();
        let schema = CsvSchema::default();
        let back = load_csv_reader(buf.as_slice(), &schema, DatasetMode::Panel, None).unwrap();
        prop_assert_eq!(back.rows(), data.rows());
    }

    /// The order-k operator zeroes every polynomial trend of degree below
    /// k, keeps a unit coefficient on the target period, and its
    /// coefficients sum to zero.
    #[test]
    fn contrast_coefficients_annihilate_low_degree_trends(
        k in 1u32..=5,
        s in 0u32..=3,
        t0 in 5i64..50,
    ) {
        let spec = kdid_coefficients(k, s);
        prop_assert_eq!(spec.offsets.len(), spec.coeffs.len());
        prop_assert_eq!(*spec.offsets.last().unwrap(), s as i64);
        prop_assert!((spec.coeffs.last().unwrap() - 1.0).abs() < 1e-12);

        let total: f64 = spec.coeffs.iter().sum();
        prop_assert!(total.abs() < 1e-9, "coefficients sum to {}", total);

        for degree in 0..k {
            let moment: f64 = spec
                .offsets
                .iter()
                .zip(&spec.coeffs)
                .map(|(&off, &c)| c * ((t0 + off) as f64).powi(degree as i32))
                .sum();
            let scale = spec
                .coeffs
                .iter()
                .map(|c| c.abs() * (t0 as f64 + s as f64).powi(degree as i32))
                .sum::<f64>()
                .max(1.0);
            prop_assert!(
                moment.abs() / scale < 1e-9,
                "degree {} leaves moment {}", degree, moment
            );
        }
    }

    /// The equivalence bound always covers the point estimate and widens
    /// with the standard error.
    #[test]
    fn equivalence_bound_dominates_the_point_and_grows_with_noise(
        point in -3.0f64..3.0,
        se in 0.01f64..1.0,
        extra in 0.01f64..1.0,
        level in 0.5f64..0.99,
    ) {
        let eq = equivalence_ci(point, se, None, level).unwrap();
        prop_assert!(eq.bound >= point.abs());
        prop_assert_eq!(eq.bound, eq.ci_lower.abs().max(eq.ci_upper.abs()));

        let wider = equivalence_ci(point, se + extra, None, level).unwrap();
        prop_assert!(wider.bound >= eq.bound);
    }

    /// Group sizes reported by the one-back contrast match the dataset.
    #[test]
    fn contrast_cell_counts_match_the_built_panel(
        seed in 0u64..10_000,
        half_units in 2usize..7,
        n_periods in 2usize..5,
    ) {
        let n_units = 2 * half_units;
        let data = common::balanced_panel(seed, n_units, n_periods, n_periods - 1);
        let assign = assign_groups(&data, Design::Basic).unwrap();
        let est = did_standard(&data, &assign, None).unwrap();
        prop_assert!(est.n_treated.iter().all(|&n| n == half_units));
        prop_assert!(est.n_control.iter().all(|&n| n == half_units));
    }
}
