mod common;

use std::collections::BTreeMap;

use choicesim::dataset::counts_pmf;
use choicesim::distributions::BinomialComponent;
use choicesim::fit::{MixtureModel, Provenance};
use choicesim::modulation::compose_modulations;
use choicesim::rng::{stream, Purpose};
use choicesim::simulate::{
    bernoulli21_count_pmf, generate_cohort, sample_count, sample_meals, uniform_marginals, CohortOptions,
    Marginals, MealMode,
};
use choicesim::{histogram_intersection, Attribute, ExpertKnowledgeTable, Pmf};
use proptest::prelude::*;

use common::oracle::direct_binomial;

/// Constant from the convergence bound `HI ≥ 1 − C/√N`.
const CONVERGENCE_C: f64 = 2.0;

fn single(n: u64, p: f64) -> MixtureModel {
    MixtureModel {
        support_max: 21,
        components: vec![BinomialComponent {
            k_target: 0,
            sigma2: 0.0,
            n,
            p,
        }],
        weights: vec![1.0],
        provenance: Provenance::default(),
    }
}

fn male_model() -> MixtureModel {
    let table = ExpertKnowledgeTable::default();
    let spec = table.resolve_spec(Attribute::Gender, "male").unwrap();
    compose_modulations(&common::reference_model(), &[spec])
}

fn empirical_counts(model: &MixtureModel, draws: u64, seed: u64) -> Pmf {
    counts_pmf(
        (0..draws).map(|i| sample_count(model, &mut stream(seed, i, Purpose::Count)).0 as usize),
        21,
    )
    .unwrap()
}

fn options(modulate: Vec<Attribute>, meals: Option<MealMode>, workers: usize) -> CohortOptions {
    CohortOptions {
        modulate,
        meals,
        workers,
    }
}

#[test]
fn degenerate_components() {
    let mut rng = stream(1, 0, Purpose::Count);
    for _ in 0..200 {
        assert_eq!(sample_count(&single(1, 0.0), &mut rng).0, 0);
        assert_eq!(sample_count(&single(21, 1.0), &mut rng).0, 21);
    }
    let (ones, _) = sample_meals(&single(21, 1.0), &mut rng, MealMode::Bernoulli21);
    assert_eq!(ones, vec![1; 21]);
    let (zeros, _) = sample_meals(&single(21, 0.0), &mut rng, MealMode::Bernoulli21);
    assert_eq!(zeros, vec![0; 21]);
}

#[test]
fn padded_meals_follow_the_component() {
    let model = single(4, 0.5);
    let counts = (0..100_000u64).map(|i| {
        let (meals, _) = sample_meals(&model, &mut stream(11, i, Purpose::Meals), MealMode::Padded);
        meals.iter().map(|&m| usize::from(m)).sum()
    });
    let empirical = counts_pmf(counts, 21).unwrap();
    let exact: Vec<f64> = (0..=21).map(|k| if k <= 4 { direct_binomial(4, 0.5, k) } else { 0.0 }).collect();
    let hi = histogram_intersection(&empirical, &Pmf::new(exact).unwrap()).unwrap();
    assert!(hi >= 0.99, "HI {hi}");
}

#[test]
fn bernoulli21_law_matches_brute_force() {
    let model = male_model();
    let analytic = bernoulli21_count_pmf(&model);
    for k in 0..=21u64 {
        let oracle: f64 = model
            .components
            .iter()
            .zip(&model.weights)
            .map(|(c, w)| w * direct_binomial(21, c.p, k))
            .sum();
        assert!((analytic.get(k as usize) - oracle).abs() < 1e-12, "k={k}");
    }
    let counts = (0..100_000u64).map(|i| {
        let (meals, _) = sample_meals(&model, &mut stream(5, i, Purpose::Meals), MealMode::Bernoulli21);
        meals.iter().map(|&m| usize::from(m)).sum()
    });
    let hi = histogram_intersection(&counts_pmf(counts, 21).unwrap(), &analytic).unwrap();
    assert!(hi >= 0.99, "HI {hi}");
}

#[test]
fn convergence_bound() {
    let model = male_model();
    let analytic = model.pmf();
    for n in [10_000u64, 1_000_000] {
        let hi = histogram_intersection(&empirical_counts(&model, n, 2018), &analytic).unwrap();
        let bound = 1.0 - CONVERGENCE_C / (n as f64).sqrt();
        assert!(hi >= bound, "N={n}: HI {hi} < {bound}");
    }
}

#[test]
fn female_only_cohort_uses_female_model() {
    let table = ExpertKnowledgeTable::default();
    let base = common::reference_model();
    let mut marginals: Marginals = BTreeMap::new();
    marginals.insert(Attribute::Gender, vec![("male".into(), 0.0), ("female".into(), 1.0)]);
    let cohort = generate_cohort(&base, &table, &marginals, 100_000, 3, &options(vec![Attribute::Gender], None, 4)).unwrap();
    assert!(cohort.iter().all(|r| r.demographics[&Attribute::Gender] == "female"));
    let female = compose_modulations(&base, &[table.resolve_spec(Attribute::Gender, "female").unwrap()]);
    let empirical = counts_pmf(cohort.iter().map(|r| r.count as usize), 21).unwrap();
    let hi = histogram_intersection(&empirical, &female.pmf()).unwrap();
    assert!(hi >= 0.99, "HI {hi}");
}

#[test]
fn group_frequencies_follow_marginals() {
    let table = ExpertKnowledgeTable::default();
    let mut marginals: Marginals = BTreeMap::new();
    marginals.insert(Attribute::Gender, vec![("male".into(), 0.3), ("female".into(), 0.7)]);
    let cohort = generate_cohort(&common::reference_model(), &table, &marginals, 50_000, 9, &options(vec![Attribute::Gender], None, 1)).unwrap();
    let male = cohort.iter().filter(|r| r.demographics[&Attribute::Gender] == "male").count() as f64;
    assert!((male / 50_000.0 - 0.3).abs() < 0.01);
}

#[test]
fn empty_cohort() {
    let table = ExpertKnowledgeTable::default();
    let cohort = generate_cohort(&common::reference_model(), &table, &uniform_marginals(&table), 0, 1, &options(vec![Attribute::Gender], None, 2)).unwrap();
    assert!(cohort.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn meals_sum_to_count(seed in any::<u64>(), padded in any::<bool>()) {
        let table = ExpertKnowledgeTable::default();
        let mode = if padded { MealMode::Padded } else { MealMode::Bernoulli21 };
        let cohort = generate_cohort(&common::reference_model(), &table, &uniform_marginals(&table), 200, seed, &options(vec![Attribute::Gender], Some(mode), 1)).unwrap();
        for r in &cohort {
            let meals = r.meals.as_ref().unwrap();
            prop_assert_eq!(meals.len(), 21);
            prop_assert_eq!(meals.iter().map(|&m| u32::from(m)).sum::<u32>(), r.count);
        }
    }

    #[test]
    fn worker_count_does_not_change_output(seed in any::<u64>(), workers in 2usize..6) {
        let table = ExpertKnowledgeTable::default();
        let marginals = uniform_marginals(&table);
        let base = common::reference_model();
        let attrs = vec![Attribute::Gender, Attribute::MaritalStatus];
        let one = generate_cohort(&base, &table, &marginals, 500, seed, &options(attrs.clone(), Some(MealMode::Bernoulli21), 1)).unwrap();
        let many = generate_cohort(&base, &table, &marginals, 500, seed, &options(attrs, Some(MealMode::Bernoulli21), workers)).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn growing_the_cohort_keeps_earlier_records(seed in any::<u64>(), n in 1u64..300, extra in 1u64..300) {
        let table = ExpertKnowledgeTable::default();
        let marginals = uniform_marginals(&table);
        let base = common::reference_model();
        let opts = options(vec![Attribute::Gender], None, 1);
        let short = generate_cohort(&base, &table, &marginals, n, seed, &opts).unwrap();
        let long = generate_cohort(&base, &table, &marginals, n + extra, seed, &opts).unwrap();
        prop_assert_eq!(&long[..n as usize], &short[..]);
    }
}
