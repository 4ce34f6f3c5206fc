use mines::geometry::{bregman_divergence, mirror_step, project_spectral_band};
use mines::estimators::SigmaGradEstimate;
use mines::problems::seeded_rotation;
use mines::{SpectralBand, SymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn symmetric(d: usize) -> impl Strategy<Value = SymMatrix<f64>> {
    prop::collection::vec(-50.0..50.0f64, d * d).prop_map(move |v| {
        let g = DMatrix::from_vec(d, d, v);
        SymMatrix::new((&g + g.transpose()) * 0.5).unwrap()
    })
}

fn band() -> impl Strategy<Value = SpectralBand<f64>> {
    (0.01..5.0f64, 1.0..100.0f64).prop_map(|(tau, width)| SpectralBand::new(tau, tau * width).unwrap())
}

fn positive_definite(d: usize) -> impl Strategy<Value = SymMatrix<f64>> {
    (any::<u64>(), prop::collection::vec(0.05..20.0f64, d))
        .prop_map(move |(seed, values)| SymMatrix::from_eigen(seeded_rotation(d, seed), &values).unwrap())
}

fn dim_and<S: Strategy, F: Fn(usize) -> S>(f: F) -> impl Strategy<Value = (usize, S::Value)> {
    (1usize..=6).prop_flat_map(move |d| (Just(d), f(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_lands_in_band_and_is_idempotent((_, a) in dim_and(symmetric), b in band()) {
        let (p, _) = project_spectral_band(&a, &b);
        let tol = 1e-9 * b.zeta().max(1.0);
        prop_assert!(p.min_eigenvalue() >= b.tau() - tol);
        prop_assert!(p.max_eigenvalue() <= b.zeta() + tol);
        let (pp, report) = project_spectral_band(&p, &b);
        prop_assert!(pp.sub(&p).frobenius_norm() <= 1e-10 * p.frobenius_norm().max(1.0));
        prop_assert!(report.moved <= 1e-10 * p.frobenius_norm().max(1.0));
    }

    #[test]
    fn projection_is_non_expansive(
        (_, (a, c)) in dim_and(|d| (symmetric(d), symmetric(d))),
        b in band(),
    ) {
        let (pa, _) = project_spectral_band(&a, &b);
        let (pc, _) = project_spectral_band(&c, &b);
        prop_assert!(pa.sub(&pc).frobenius_norm() <= a.sub(&c).frobenius_norm() + 1e-10);
    }

    #[test]
    fn projection_is_nearest_feasible_point(
        (d, a) in dim_and(symmetric),
        b in band(),
        seed in any::<u64>(),
        fractions in prop::collection::vec(0.0..=1.0f64, 6),
    ) {
        let (p, report) = project_spectral_band(&a, &b);
        let values: Vec<f64> = fractions[..d].iter().map(|t| b.tau() + t * (b.zeta() - b.tau())).collect();
        let x = SymMatrix::from_eigen(seeded_rotation(d, seed), &values).unwrap();
        let dist = a.sub(&p).frobenius_norm();
        prop_assert!(dist <= a.sub(&x).frobenius_norm() + 1e-10);
        prop_assert!((dist - report.moved).abs() <= 1e-9 * dist.max(1.0));
    }

    #[test]
    fn bregman_is_nonnegative_and_vanishes_on_diagonal(
        (d, s1) in dim_and(positive_definite),
        seed in any::<u64>(),
        alpha in 0.01..3.0f64,
    ) {
        let s2 = SymMatrix::from_eigen(seeded_rotation(d, seed), &vec![1.5; d]).unwrap();
        let s2 = s2.scaled_add(0.5, &s1);
        prop_assert!(bregman_divergence(&s1, &s2, alpha).unwrap() >= -1e-10);
        prop_assert!(bregman_divergence(&s2, &s1, alpha).unwrap() >= -1e-10);
        prop_assert!(bregman_divergence(&s1, &s1, alpha).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn eigen_decomposition_round_trips((_, a) in dim_and(symmetric)) {
        let e = a.eigen();
        let values: Vec<f64> = e.values.iter().copied().collect();
        let rebuilt = SymMatrix::from_eigen(e.vectors.clone(), &values).unwrap();
        prop_assert!(rebuilt.sub(&a).frobenius_norm() <= 1e-10 * a.frobenius_norm().max(1.0));
        prop_assert!(values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mirror_step_stays_feasible(
        (d, sigma_inv) in dim_and(positive_definite),
        seed in any::<u64>(),
        eta in 0.0..2.0f64,
    ) {
        let b = SpectralBand::new(0.1, 25.0).unwrap();
        let (start, _) = project_spectral_band(&sigma_inv, &b);
        let g = SymMatrix::from_eigen(seeded_rotation(d, seed), &vec![-4.0; d])
            .unwrap()
            .scaled_add(1.0, &sigma_inv);
        let (next, _) = mirror_step(&start, &SigmaGradEstimate { matrix: g }, eta, &b);
        prop_assert!(b.contains(&next));
    }
}
