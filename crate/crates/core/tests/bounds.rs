use polforge::bounds::{
    alpha_for_angle, angle_between, mc_validate_tail, query_lower_bound, stability_zeta, tail_grid,
    CostDistributionSpec, QueryBound,
};
use polforge::verifier::{verify_step, Decision, StepRule};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma, LogNormal};

fn exact_lower_tail(dist: &CostDistributionSpec, x: f64) -> f64 {
    match dist {
        CostDistributionSpec::Lognormal { mu, sigma } => {
            LogNormal::new(*mu, *sigma).unwrap().cdf(x)
        }
        CostDistributionSpec::Gamma { shape, scale } => {
            Gamma::new(*shape, 1.0 / scale).unwrap().cdf(x)
        }
        CostDistributionSpec::PointMass { value } => f64::from(u8::from(*value <= x)),
        CostDistributionSpec::Empirical { samples } => {
            samples.iter().filter(|s| **s <= x).count() as f64 / samples.len() as f64
        }
    }
}

#[test]
fn chebyshev_bound_dominates_exact_tails() {
    for (kind, c, var, dist) in tail_grid().unwrap() {
        let e = dist.mean();
        let v = dist.variance();
        assert!((e - 10.0).abs() < 1e-9);
        assert!(
            matches!(dist, CostDistributionSpec::PointMass { .. }) || (v - var).abs() < 1e-9 * var
        );
        let exact = exact_lower_tail(&dist, c * e);
        let bound = query_lower_bound(v, e, c).unwrap().p();
        assert!(
            exact <= bound,
            "{} c={c} var={var}: exact {exact} > bound {bound}",
            kind.name()
        );
    }
}

#[test]
fn monte_carlo_tail_agrees_with_exact_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (kind, c, var, dist) in tail_grid().unwrap() {
        let check = mc_validate_tail(&dist, c, 20_000, &mut rng).unwrap();
        assert!(check.holds, "{} c={c} var={var}", kind.name());
        let exact = exact_lower_tail(&dist, c * dist.mean());
        let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!(
            (check.empirical_p - exact).abs() <= 5.0 * se + 1e-12,
            "{} c={c} var={var}",
            kind.name()
        );
    }
}

#[test]
fn query_count_solves_the_two_thirds_equation() {
    for (var, e, c) in [(4.0, 10.0, 0.5), (0.01, 1.0, 0.1), (30.0, 7.0, 0.0)] {
        let QueryBound::Finite { n, p } = query_lower_bound(var, e, c).unwrap() else {
            panic!("expected a finite bound")
        };
        assert!(((1.0 - p).powf(n) - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(
        query_lower_bound(0.0, 1.0, 0.5).unwrap(),
        QueryBound::Unbounded
    );
    assert!(matches!(
        query_lower_bound(100.0, 1.0, 0.5).unwrap(),
        QueryBound::Vacuous { .. }
    ));
}

#[test]
fn query_count_diverges_as_variance_vanishes() {
    let mut last = 0.0;
    for exp in 1..12 {
        let n = query_lower_bound(10f64.powi(-exp), 1.0, 0.5).unwrap().n();
        assert!(n > last);
        last = n;
    }
    assert!(last > 1e10);
}

proptest! {
    #[test]
    fn zeta_rises_with_c_and_falls_with_e(
        var_p in 1e-3f64..10.0, var_f in 0.0f64..10.0, e in 0.1f64..100.0, c1 in 0.0f64..0.99, c2 in 0.0f64..0.99, scale in 1.0f64..10.0,
    ) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let z_lo = stability_zeta(var_p, e, lo, var_f).unwrap().zeta;
        let z_hi = stability_zeta(var_p, e, hi, var_f).unwrap().zeta;
        prop_assert!(z_lo <= z_hi);
        let z_big_e = stability_zeta(var_p, e * scale, lo, var_f).unwrap().zeta;
        prop_assert!(z_big_e <= z_lo);
    }

    #[test]
    fn query_count_falls_as_variance_grows(v1 in 1e-6f64..1.0, v2 in 1e-6f64..1.0, e in 2.0f64..10.0, c in 0.0f64..0.5) {
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let n_lo = query_lower_bound(lo, e, c).unwrap().n();
        let n_hi = query_lower_bound(hi, e, c).unwrap().n();
        prop_assert!(n_hi <= n_lo);
    }

    #[test]
    fn adaptive_acceptance_bounds_the_angle(
        theta in 0.01f64..1.5,
        g in prop::collection::vec(-1.0f64..1.0, 6),
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        r in 0.0f64..1.0,
    ) {
        let alpha = alpha_for_angle(theta).unwrap();
        let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nd = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(ng > 1e-3 && nd > 1e-3);
        let gp: Vec<f64> = g.iter().zip(&dir).map(|(a, d)| a + r * alpha * ng * d / nd).collect();
        let ngp = gp.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dist = g.iter().zip(&gp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let v = verify_step(0, dist, ng, ngp, StepRule::Adaptive(alpha)).unwrap();
        if v.decision == Decision::Accept {
            prop_assert!(angle_between(&g, &gp) <= theta + 1e-12);
        }
    }
}
