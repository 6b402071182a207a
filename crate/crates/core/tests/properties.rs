use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::Rng;
use silab_core::analysis::{correlation_experiment, delta_kl, spearman, CorrelationConfig};
use silab_core::attack::ActionSource;
use silab_core::dist::{
    dist_refine, fit_reference_view, kl_diag, kl_full, GaussianEstimate,
};
use silab_core::rng::rng_from_seed;

fn gaussian(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-10.0..10.0f64, dim),
        prop::collection::vec(0.05..5.0f64, dim),
    )
}

fn pair() -> impl Strategy<Value = ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>))> {
    (1usize..6).prop_flat_map(|n| (gaussian(n), gaussian(n)))
}

fn diag(p: &(Vec<f64>, Vec<f64>)) -> GaussianEstimate {
    GaussianEstimate::diagonal(p.0.clone(), p.1.clone()).unwrap()
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, q) in pair()) {
        let (p, q) = (diag(&p), diag(&q));
        prop_assert!(kl_diag(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_is_invariant_under_shared_affine_maps(
        (p, q) in pair(),
        shift in -5.0..5.0f64,
        scale in 0.1..10.0f64,
    ) {
        let map = |g: &(Vec<f64>, Vec<f64>)| {
            GaussianEstimate::diagonal(
                g.0.iter().map(|m| scale * m + shift).collect(),
                g.1.iter().map(|s| scale * s).collect(),
            )
            .unwrap()
        };
        let before = kl_diag(&diag(&p), &diag(&q)).unwrap();
        let after = kl_diag(&map(&p), &map(&q)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn kl_full_matches_diagonal_on_diagonal_inputs((p, q) in pair()) {
        let (p, q) = (diag(&p), diag(&q));
        let full = kl_full(&p.to_full().unwrap(), &q.to_full().unwrap()).unwrap();
        let d = kl_diag(&p, &q).unwrap();
        prop_assert!((full - d).abs() <= 1e-12 * d.max(1.0));
    }

    #[test]
    fn refine_ignores_weight_scale(
        rows in prop::collection::vec((-10.0..10.0f64, 0.01..5.0f64), 2..40),
        c in 0.01..100.0f64,
    ) {
        let states = Array2::from_shape_fn((rows.len(), 1), |(i, _)| rows[i].0);
        let w: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let a = dist_refine(states.view(), &w).unwrap();
        let b = dist_refine(states.view(), &scaled).unwrap();
        prop_assert!((a.mu[0] - b.mu[0]).abs() <= 1e-12 * (1.0 + a.mu[0].abs()));
        prop_assert!((a.sigma[0] - b.sigma[0]).abs() <= 1e-9 * (1.0 + a.sigma[0]));
        let (lo, hi) = rows.iter().fold((f64::MAX, f64::MIN), |(l, h), r| (l.min(r.0), h.max(r.0)));
        prop_assert!(a.mu[0] >= lo - 1e-12 && a.mu[0] <= hi + 1e-12);
    }

    #[test]
    fn spearman_of_strictly_monotone_sequence_is_one(
        mut xs in prop::collection::hash_set(-1000i32..1000, 4..50)
            .prop_map(|s| s.into_iter().map(f64::from).collect::<Vec<_>>()),
    ) {
        xs.sort_by(f64::total_cmp);
        let (rho, _) = spearman(&xs, &xs).unwrap();
        prop_assert_eq!(rho, 1.0);
    }

    #[test]
    fn spearman_is_invariant_under_increasing_transforms(
        pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 4..60),
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        prop_assume!(xs.iter().any(|x| *x != xs[0]) && ys.iter().any(|y| *y != ys[0]));
        let (rho, _) = spearman(&xs, &ys).unwrap();
        let tx: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let ty: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
        let (rho_t, _) = spearman(&tx, &ty).unwrap();
        prop_assert!((rho - rho_t).abs() < 1e-12);
    }

    #[test]
    fn delta_kl_is_scale_free(
        initial in 1e-3..1e3f64,
        last in 0.0..1e3f64,
        c in 1e-3..1e3f64,
    ) {
        let a = delta_kl(initial, last).unwrap();
        let b = delta_kl(c * initial, c * last).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}

struct Constant(f64);

impl ActionSource for Constant {
    fn actions(&self, states: ArrayView2<'_, f64>) -> silab_core::Result<Array2<f64>> {
        Ok(Array2::from_elem((states.nrows(), 1), self.0))
    }
}

#[test]
fn constant_victim_shows_no_loss_kl_correlation() {
    let mut rng = rng_from_seed(11);
    let states = Array2::from_shape_fn((500, 2), |_| rng.random_range(-3.0..3.0));
    let reference = fit_reference_view(states.view()).unwrap();
    let cfg = CorrelationConfig {
        count: 100,
        points_per_dist: 1000,
        hidden: vec![16],
        ..CorrelationConfig::desk()
    };
    let res = correlation_experiment(&Constant(0.3), &reference, &cfg, 5).unwrap();
    assert_eq!(res.records.len(), 100);
    assert!(res.p_value > 0.01, "rho {} p {}", res.rho, res.p_value);
}
