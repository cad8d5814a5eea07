//! Property-based invariants.

use nalgebra::{DMatrix, DVector};
use ppca_elbo::discrete::{discrete_elbo, log_sum_exp, log_tempered_evidence, tempered_posterior, DiscreteModel};
use ppca_elbo::gauss::{clip_entries, frobenius_sq_diff, kl_zero_mean_gaussian, renyi_zero_mean_gaussian};
use ppca_elbo::ppca::{covariance, log_det_cov, sm_inverse};
use ppca_elbo::selection::{argmax_smallest_rank, penalized_score};
use ppca_elbo::variational::{kl_to_prior, ColumnGaussian, CovStructure, VariationalFamily};
use ppca_elbo::{Alpha, Dataset, LoadingMatrix, PpcaParams, PriorSpec, SpdMatrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn spd(d: usize) -> impl Strategy<Value = SpdMatrix> {
    matrix(d, d, 2.0).prop_map(move |b| SpdMatrix::new(&b * b.transpose() + DMatrix::identity(d, d) * 0.2).unwrap())
}

fn alpha() -> impl Strategy<Value = Alpha> {
    (0.01f64..0.99).prop_map(|a| Alpha::new(a).unwrap())
}

fn loading() -> impl Strategy<Value = (usize, DMatrix<f64>)> {
    (2usize..8).prop_flat_map(|d| (1..d).prop_flat_map(move |k| matrix(d, k, 2.0).prop_map(move |w| (d, w))))
}

fn discrete(max_atoms: usize) -> impl Strategy<Value = DiscreteModel> {
    prop::collection::vec((0.01f64..1.0, -50.0f64..50.0), 1..max_atoms).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        let mut mass: Vec<f64> = atoms.iter().map(|a| a.0 / total).collect();
        let drift = 1.0 - mass.iter().sum::<f64>();
        mass[0] += drift;
        DiscreteModel::unlabeled(mass, atoms.iter().map(|a| a.1).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn clip_is_idempotent_bounded_and_non_expansive(a in matrix(4, 4, 10.0), b in 0.1f64..3.0, inner in matrix(4, 4, 1.0)) {
        let c = clip_entries(&a, b).unwrap();
        prop_assert!(c.iter().all(|v| v.abs() <= b * b));
        prop_assert_eq!(clip_entries(&c, b).unwrap(), c.clone());
        let inside = inner * (b * b);
        prop_assert!(frobenius_sq_diff(&c, &inside) <= frobenius_sq_diff(&a, &inside) + 1e-9);
    }

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_the_diagonal(p in spd(3), r in spd(3), a in alpha()) {
        prop_assert!(kl_zero_mean_gaussian(&p, &r).unwrap() >= 0.0);
        prop_assert!(renyi_zero_mean_gaussian(a, &p, &r).unwrap() >= 0.0);
        prop_assert_eq!(kl_zero_mean_gaussian(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(renyi_zero_mean_gaussian(a, &p, &p).unwrap(), 0.0);
    }

    #[test]
    fn renyi_is_nondecreasing_in_alpha(p in spd(2), r in spd(2), a in 0.05f64..0.5, b in 0.5f64..0.95) {
        let lo = renyi_zero_mean_gaussian(Alpha::new(a).unwrap(), &p, &r).unwrap();
        let hi = renyi_zero_mean_gaussian(Alpha::new(b).unwrap(), &p, &r).unwrap();
        prop_assert!(lo <= hi + 1e-10 * hi.max(1.0));
    }

    #[test]
    fn sherman_morrison_inverts_the_covariance((d, w) in loading(), noise in 0.1f64..10.0) {
        let p = PpcaParams::new(LoadingMatrix::new(w).unwrap(), noise).unwrap();
        let cov = covariance(&p).into_matrix();
        let m = sm_inverse(&p).into_matrix();
        prop_assert!((&m * &cov - DMatrix::identity(d, d)).norm() < 1e-8);
        let dense = cov.lu().determinant().ln();
        prop_assert!((log_det_cov(&p) - dense).abs() < 1e-9 * dense.abs().max(1.0));
    }

    #[test]
    fn tempered_posterior_is_a_distribution_and_dv_holds(model in discrete(60), a in alpha(), shift in -1e3f64..1e3) {
        let post = tempered_posterior(&model, a);
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(post.iter().all(|p| *p >= 0.0));
        let lz = log_tempered_evidence(&model, a);
        prop_assert!((discrete_elbo(&model, &post, a).unwrap() - lz).abs() < 1e-9 * lz.abs().max(1.0));
        prop_assert!(discrete_elbo(&model, model.prior_mass(), a).unwrap() <= lz + 1e-12);
        let shifted = model.shifted(shift).unwrap();
        let moved = tempered_posterior(&shifted, a);
        prop_assert!(moved.iter().zip(&post).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn log_sum_exp_shifts(xs in prop::collection::vec(-700.0f64..700.0, 1..40), c in -500.0f64..500.0) {
        let moved: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let (a, b) = (log_sum_exp(&xs), log_sum_exp(&moved));
        prop_assert!((b - a - c).abs() < 1e-9 * b.abs().max(1.0));
        prop_assert!(a >= xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn kl_to_prior_is_nonnegative(means in prop::collection::vec(-3.0f64..3.0, 8), diag in prop::collection::vec(0.05f64..3.0, 8), s2 in 0.1f64..5.0) {
        let cols = (0..2).map(|j| {
            let mean = DVector::from_column_slice(&means[4 * j..4 * j + 4]);
            let factor = DMatrix::from_diagonal(&DVector::from_column_slice(&diag[4 * j..4 * j + 4]));
            ColumnGaussian::new(mean, factor, CovStructure::Diagonal).unwrap()
        }).collect();
        let q = VariationalFamily::new(cols).unwrap();
        prop_assert!(kl_to_prior(&q, &PriorSpec::new(s2, 1.0).unwrap()) >= 0.0);
    }

    #[test]
    fn uniform_penalty_preserves_the_argmax(elbos in prop::collection::vec(-1e4f64..1e4, 1..6), weight in 0.01f64..0.2) {
        let raw: Vec<(usize, f64)> = elbos.iter().enumerate().map(|(i, e)| (i + 1, *e)).collect();
        let scored: Vec<(usize, f64)> = raw.iter().map(|(k, e)| (*k, penalized_score(*e, weight).unwrap())).collect();
        prop_assert_eq!(argmax_smallest_rank(&raw), argmax_smallest_rank(&scored));
    }

    #[test]
    fn dataset_csv_round_trip_is_exact(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 12)) {
        let data = Dataset::new(DMatrix::from_vec(4, 3, values)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, true).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), true).unwrap();
        prop_assert_eq!(back.rows().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        data.rows().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
