use natcity::scaling::{
    fit_power_law, fit_power_law_at, goodness_of_fit, goodness_of_fit_fixed_xmin, mle_alpha, rank_size, write_rank_size_csv, ScalingError,
};
use natcity_testkit::{exponential_sampler, pareto_sampler};
use proptest::prelude::*;

#[test]
fn recovers_exponent_of_large_pareto_sample() {
    let v = pareto_sampler(2.5, 1.0, 10_000, 2024);
    let fit = fit_power_law(&v).unwrap();
    assert!((fit.alpha - 2.5).abs() <= 0.05, "alpha {}", fit.alpha);
    assert!(fit.x_min >= 1.0);
    assert!(fit.ks_distance < 0.02);
}

#[test]
fn closed_form_at_fixed_xmin() {
    let v = pareto_sampler(2.0, 3.0, 500, 1);
    let fit = fit_power_law_at(&v, 3.0).unwrap();
    let n = v.len() as f64;
    let expected = 1.0 + n / v.iter().map(|x| (x / 3.0).ln()).sum::<f64>();
    assert!((fit.alpha - expected).abs() < 1e-12);
    assert_eq!(fit.n_tail, 500);
    assert!((mle_alpha(&v, 3.0).unwrap() - fit.alpha).abs() < 1e-12);
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let v = pareto_sampler(2.5, 1.0, 800, 8);
    let fit = fit_power_law(&v).unwrap();
    let a = goodness_of_fit(&fit, &v, 120, 77).unwrap();
    let b = goodness_of_fit(&fit, &v, 120, 77).unwrap();
    assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    assert_eq!(a.n_bootstrap, 120);
}

#[test]
fn pareto_is_plausible_and_truncated_exponential_is_not() {
    let v = pareto_sampler(2.5, 1.0, 1000, 3);
    let fit = fit_power_law(&v).unwrap();
    assert!(goodness_of_fit(&fit, &v, 150, 3).unwrap().plausible);

    let e = exponential_sampler(1.0, 1.0, 1000, 3);
    let fit = fit_power_law_at(&e, 1.0).unwrap();
    let gof = goodness_of_fit_fixed_xmin(&fit, &e, 150, 3).unwrap();
    assert!(!gof.plausible, "p = {}", gof.p_value);
}

#[test]
fn preconditions() {
    assert!(matches!(fit_power_law(&[1.0; 5]), Err(ScalingError::TooFewValues { .. })));
    assert!(matches!(fit_power_law(&[2.0; 20]), Err(ScalingError::DegenerateSample)));
    let mut v = pareto_sampler(2.0, 1.0, 50, 1);
    v[3] = -1.0;
    assert!(matches!(fit_power_law(&v), Err(ScalingError::NonPositiveValue(_))));
    let v = pareto_sampler(2.0, 1.0, 50, 1);
    let fit = fit_power_law(&v).unwrap();
    assert!(matches!(goodness_of_fit(&fit, &v, 10, 1), Err(ScalingError::InvalidBootstrapCount(10))));
}

#[test]
fn rank_size_csv() {
    let r = rank_size(&[3.0, 10.0, 1.0]);
    assert_eq!(r, vec![(1, 10.0), (2, 3.0), (3, 1.0)]);
    let mut buf = Vec::new();
    write_rank_size_csv(&r, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "rank,size\n1,10\n2,3\n3,1\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_is_well_formed(seed in 0u64..10_000, alpha in 1.6f64..3.5) {
        let v = pareto_sampler(alpha, 1.0, 300, seed);
        let fit = fit_power_law(&v).unwrap();
        prop_assert!(fit.alpha > 1.0);
        prop_assert!(v.contains(&fit.x_min));
        prop_assert_eq!(fit.n_tail, v.iter().filter(|&&x| x >= fit.x_min).count());
        prop_assert!((0.0..=1.0).contains(&fit.ks_distance));
    }
}
