use choicesim::distributions::mixture_pmf;
use choicesim::experiment::reference_peaks;
use choicesim::fit::{
    component_from_peak, fit, solve_weights, EvalPoints, FitError, FitOptions, PeakSpec, ZeroPeakRule,
};
use choicesim::{BinomialComponent, Pmf};
use proptest::prelude::*;
use proptest::sample::subsequence;

mod common;
use common::oracle::grid_oracle;

const ORACLE_TOL: f64 = 2e-3;

fn components(specs: &[PeakSpec]) -> Vec<BinomialComponent> {
    specs
        .iter()
        .map(|&s| component_from_peak(s, ZeroPeakRule::Bernoulli).unwrap())
        .collect()
}

fn pmf_strategy() -> impl Strategy<Value = Pmf> {
    prop::collection::vec(0.0f64..1.0, 22)
        .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 1e-2)
        .prop_map(|v| Pmf::from_counts(&v).unwrap())
}

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

#[test]
fn two_point_like_components_split_sixty_forty() {
    let comps = components(&[PeakSpec::new(0, 0.001), PeakSpec::new(21, 0.01)]);
    let mut mass = vec![0.0; 22];
    mass[0] = 0.6;
    mass[21] = 0.4;
    let w = solve_weights(&comps, &Pmf::new(mass).unwrap(), &[0, 21], 1.0).unwrap();
    assert!((w[0] - 0.6).abs() < 5e-3 && (w[1] - 0.4).abs() < 5e-3, "{w:?}");
}

#[test]
fn one_component_gets_all_weight() {
    let comps = components(&[PeakSpec::new(7, 0.4)]);
    let target = Pmf::point_mass(3, 21);
    assert_eq!(solve_weights(&comps, &target, &[7], 1.0).unwrap(), vec![1.0]);
}

#[test]
fn fewer_points_than_components_is_rejected() {
    let comps = components(&[PeakSpec::new(2, 1.0), PeakSpec::new(7, 0.4)]);
    let err = solve_weights(&comps, &Pmf::point_mass(2, 21), &[2], 1.0).unwrap_err();
    assert!(matches!(err, FitError::TooFewEvalPoints { .. }));
}

#[test]
fn reference_fit_recovers_its_own_mixture() {
    let specs = reference_peaks();
    let comps = components(&specs);
    let weights = [0.25, 0.2, 0.15, 0.1, 0.1, 0.08, 0.07, 0.05];
    let target = mixture_pmf(&comps, &weights, 21);
    let opts = FitOptions {
        eval_points: EvalPoints::FullSupport,
        ..FitOptions::default()
    };
    let model = fit(&target, &specs, &opts).unwrap();
    for (got, want) in model.weights.iter().zip(weights) {
        assert!((got - want).abs() < 1e-6, "{:?}", model.weights);
    }
    assert!(model.provenance.train_hi > 0.999_99);
    assert!(model.provenance.residual < 1e-9);
}

prop_compose! {
    fn small_instance()(
        specs in subsequence(reference_peaks(), 1..=3),
        extra in subsequence((0u32..=21).collect::<Vec<_>>(), 0..=3),
        target in pmf_strategy(),
        lambda in prop_oneof![Just(1.0), 0.25f64..4.0],
    ) -> (Vec<PeakSpec>, Vec<u32>, Pmf, f64) {
        let mut points: Vec<u32> = specs.iter().map(|s| s.k).collect();
        for k in extra {
            if !points.contains(&k) {
                points.push(k);
            }
        }
        points.truncate(6);
        (specs, points, target, lambda)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_always_on_simplex(
        specs in subsequence(reference_peaks(), 1..=8),
        target in pmf_strategy(),
        full in any::<bool>(),
        lambda in 0.05f64..20.0,
    ) {
        let opts = FitOptions {
            eval_points: if full { EvalPoints::FullSupport } else { EvalPoints::Peaks },
            lambda,
            zero_peak: ZeroPeakRule::Bernoulli,
        };
        let model = fit(&target, &specs, &opts).unwrap();
        prop_assert_eq!(model.weights.len(), specs.len());
        prop_assert!(on_simplex(&model.weights), "{:?}", model.weights);
        let total: f64 = model.pmf().mass().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn components_keep_mode_and_mean(k in 1u32..=21, sigma2 in 0.001f64..21.0) {
        if let Ok(c) = component_from_peak(PeakSpec::new(k, sigma2), ZeroPeakRule::Bernoulli) {
            prop_assert_eq!(c.mode(), u64::from(k));
            prop_assert!((c.mean() - f64::from(k)).abs() <= 0.5);
            prop_assert!(c.n >= 1 && (0.0..=1.0).contains(&c.p));
        }
    }

    #[test]
    fn fit_is_deterministic(specs in subsequence(reference_peaks(), 1..=8), target in pmf_strategy()) {
        let a = fit(&target, &specs, &FitOptions::default()).unwrap();
        let b = fit(&target, &specs, &FitOptions::default()).unwrap();
        let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.weights), bits(&b.weights));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_simplex_grid_search((specs, points, target, lambda) in small_instance()) {
        let comps = components(&specs);
        let w = solve_weights(&comps, &target, &points, lambda).unwrap();
        let oracle = grid_oracle(&comps, &target, &points, lambda);
        for (a, b) in w.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= ORACLE_TOL, "solver {:?} oracle {:?}", w, oracle);
        }
    }
}
