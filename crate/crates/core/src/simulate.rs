//! Synthetic eat-out counts, meal-level decisions, and demographic cohorts.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{binomial_folded, Pmf, MEALS_PER_WEEK};
use crate::fit::MixtureModel;
use crate::modulation::{compose_modulations, Attribute, ExpertKnowledgeTable, ModulationError};
use crate::rng::{seed_path, stream, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MealMode {
    /// 21 independent Bernoulli(p_j) meals.
    #[default]
    Bernoulli21,
    /// n_j Bernoulli(p_j) meals plus 21 − n_j meals at home, in shuffled order.
    Padded,
}

impl std::str::FromStr for MealMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bernoulli21" => Ok(MealMode::Bernoulli21),
            "padded" => Ok(MealMode::Padded),
            other => Err(format!("unknown meal mode `{other}`")),
        }
    }
}

fn pick_component<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = j;
        acc += w;
        if u < acc {
            return j;
        }
    }
    last
}

fn binomial_draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    Binomial::new(n, p)
        .expect("component probability lies in [0, 1]")
        .sample(rng)
}

/// Draws a component by weight, then a count from it (folded to the support).
pub fn sample_count<R: Rng + ?Sized>(model: &MixtureModel, rng: &mut R) -> (u32, usize) {
    let j = pick_component(&model.weights, rng);
    let c = &model.components[j];
    let count = binomial_draw(c.n, c.p, rng).min(model.support_max as u64);
    (count as u32, j)
}

/// Draws one week of meal decisions (`1` = ate out).
pub fn sample_meals<R: Rng + ?Sized>(model: &MixtureModel, rng: &mut R, mode: MealMode) -> (Vec<u8>, usize) {
    let j = pick_component(&model.weights, rng);
    let c = &model.components[j];
    let meals = match mode {
        MealMode::Bernoulli21 => (0..MEALS_PER_WEEK)
            .map(|_| u8::from(rng.random::<f64>() < c.p))
            .collect(),
        MealMode::Padded => {
            let out = (0..c.n).filter(|_| rng.random::<f64>() < c.p).count();
            let out = out.min(MEALS_PER_WEEK);
            let mut meals = vec![0u8; MEALS_PER_WEEK];
            meals[..out].fill(1);
            meals.shuffle(rng);
            meals
        }
    };
    (meals, j)
}

/// Count law induced by [`MealMode::Bernoulli21`]: `Σ_j w_j · Binom(21, p_j)`.
pub fn bernoulli21_count_pmf(model: &MixtureModel) -> Pmf {
    let mut mass = vec![0.0; MEALS_PER_WEEK + 1];
    for (c, &w) in model.components.iter().zip(&model.weights) {
        for (acc, m) in mass.iter_mut().zip(binomial_folded(MEALS_PER_WEEK as u64, c.p, MEALS_PER_WEEK)) {
            *acc += w * m;
        }
    }
    Pmf::new(mass).expect("mixture of pmfs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub index: u64,
    pub demographics: BTreeMap<Attribute, String>,
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meals: Option<Vec<u8>>,
    pub component_index: usize,
    pub seed_path: String,
}

/// Per-attribute group probabilities, drawn independently.
pub type Marginals = BTreeMap<Attribute, Vec<(String, f64)>>;

/// Equal odds for both groups of every table attribute.
pub fn uniform_marginals(table: &ExpertKnowledgeTable) -> Marginals {
    table
        .rows
        .iter()
        .map(|r| (r.attribute, vec![(r.group_a.clone(), 0.5), (r.group_b.clone(), 0.5)]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortOptions {
    /// Attributes whose modulation is applied; more than one composes them.
    pub modulate: Vec<Attribute>,
    pub meals: Option<MealMode>,
    pub workers: usize,
}

impl Default for CohortOptions {
    fn default() -> Self {
        CohortOptions {
            modulate: vec![Attribute::Gender],
            meals: None,
            workers: 1,
        }
    }
}

fn validate_marginals(
    marginals: &Marginals,
    table: &ExpertKnowledgeTable,
    modulate: &[Attribute],
) -> Result<(), SimulateError> {
    for (attr, groups) in marginals {
        if groups.is_empty() {
            return Err(SimulateError::InvalidMarginals(format!("{attr}: no groups")));
        }
        if let Some((g, p)) = groups.iter().find(|(_, p)| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(SimulateError::InvalidMarginals(format!(
                "{attr}: probability {p} for `{g}`"
            )));
        }
        let total: f64 = groups.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SimulateError::InvalidMarginals(format!(
                "{attr}: probabilities sum to {total}"
            )));
        }
    }
    for attr in modulate {
        let groups = marginals.get(attr).ok_or_else(|| {
            SimulateError::InvalidMarginals(format!("no marginal for modulated attribute {attr}"))
        })?;
        for (g, _) in groups {
            table.resolve_spec(*attr, g)?;
        }
    }
    Ok(())
}

fn draw_group<'a, R: Rng + ?Sized>(groups: &'a [(String, f64)], rng: &mut R) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, p) in groups {
        acc += p;
        if u < acc {
            return g;
        }
    }
    groups
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map_or(&groups[0].0, |(g, _)| g)
}

/// Draws `size` synthetic respondents. Output is a pure function of the
/// inputs and `seed`; worker count only affects speed.
pub fn generate_cohort(
    base: &MixtureModel,
    table: &ExpertKnowledgeTable,
    marginals: &Marginals,
    size: u64,
    seed: u64,
    options: &CohortOptions,
) -> Result<Vec<SyntheticRecord>, SimulateError> {
    validate_marginals(marginals, table, &options.modulate)?;

    // Modulated model for every combination of modulating groups.
    let mut models: BTreeMap<Vec<String>, MixtureModel> = BTreeMap::new();
    let mut combos: Vec<Vec<String>> = vec![vec![]];
    for attr in &options.modulate {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                marginals[attr].iter().map(move |(g, _)| {
                    let mut c = prefix.clone();
                    c.push(g.clone());
                    c
                })
            })
            .collect();
    }
    for combo in combos {
        let specs = options
            .modulate
            .iter()
            .zip(&combo)
            .map(|(a, g)| table.resolve_spec(*a, g))
            .collect::<Result<Vec<_>, _>>()?;
        models.insert(combo, compose_modulations(base, &specs));
    }

    let one = |index: u64| -> SyntheticRecord {
        let mut demo_rng = stream(seed, index, Purpose::Demographics);
        let demographics: BTreeMap<Attribute, String> = marginals
            .iter()
            .map(|(attr, groups)| (*attr, draw_group(groups, &mut demo_rng).to_string()))
            .collect();
        let key: Vec<String> = options
            .modulate
            .iter()
            .map(|a| demographics[a].clone())
            .collect();
        let model = &models[&key];
        let (count, component_index, meals) = match options.meals {
            None => {
                let (count, j) = sample_count(model, &mut stream(seed, index, Purpose::Count));
                (count, j, None)
            }
            Some(mode) => {
                let (meals, j) = sample_meals(model, &mut stream(seed, index, Purpose::Meals), mode);
                let count = meals.iter().map(|&m| u32::from(m)).sum();
                (count, j, Some(meals))
            }
        };
        SyntheticRecord {
            index,
            demographics,
            count,
            meals,
            component_index,
            seed_path: seed_path(seed, index),
        }
    };

    if options.workers <= 1 {
        return Ok((0..size).map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| SimulateError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..size).into_par_iter().map(one).collect()))
}

/// One row per record: demographics, count, optional `m1..m21`,
/// component index, seed path.
pub fn write_cohort_csv<W: Write>(
    records: &[SyntheticRecord],
    attributes: &[Attribute],
    with_meals: bool,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = attributes.iter().map(|a| a.to_string()).collect();
    header.push("count".into());
    if with_meals {
        header.extend((1..=MEALS_PER_WEEK).map(|i| format!("m{i}")));
    }
    header.push("component_index".into());
    header.push("seed_path".into());
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = attributes
            .iter()
            .map(|a| r.demographics.get(a).cloned().unwrap_or_default())
            .collect();
        row.push(r.count.to_string());
        if with_meals {
            let meals = r.meals.as_deref().unwrap_or(&[]);
            row.extend((0..MEALS_PER_WEEK).map(|i| meals.get(i).map_or(String::new(), |m| m.to_string())));
        }
        row.push(r.component_index.to_string());
        row.push(r.seed_path.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cohort_jsonl<W: Write>(records: &[SyntheticRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::BinomialComponent;
    use crate::fit::Provenance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(parts: &[(u64, f64, f64)]) -> MixtureModel {
        MixtureModel {
            support_max: 21,
            components: parts
                .iter()
                .map(|&(n, p, _)| BinomialComponent { k_target: 0, sigma2: 0.0, n, p })
                .collect(),
            weights: parts.iter().map(|&(_, _, w)| w).collect(),
            provenance: Provenance {
                eval_points: vec![],
                lambda: 1.0,
                residual: 0.0,
                train_hi: 1.0,
                seed: None,
                modulation: vec![],
            },
        }
    }

    #[test]
    fn degenerate_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = model(&[(1, 0.0, 1.0)]);
        let all = model(&[(21, 1.0, 1.0)]);
        for _ in 0..100 {
            assert_eq!(sample_count(&zero, &mut rng), (0, 0));
            assert_eq!(sample_count(&all, &mut rng), (21, 0));
        }
    }

    #[test]
    fn counts_fold_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big = model(&[(40, 1.0, 1.0)]);
        assert_eq!(sample_count(&big, &mut rng).0, 21);
    }

    #[test]
    fn degenerate_meals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (meals, _) = sample_meals(&model(&[(5, 1.0, 1.0)]), &mut rng, MealMode::Bernoulli21);
        assert_eq!(meals, vec![1; 21]);
        let (meals, _) = sample_meals(&model(&[(5, 0.0, 1.0)]), &mut rng, MealMode::Bernoulli21);
        assert_eq!(meals, vec![0; 21]);
        let (meals, _) = sample_meals(&model(&[(5, 1.0, 1.0)]), &mut rng, MealMode::Padded);
        assert_eq!(meals.iter().map(|&m| m as u32).sum::<u32>(), 5);
    }

    #[test]
    fn zero_weight_components_never_drawn() {
        let m = model(&[(1, 0.0, 0.0), (21, 1.0, 1.0), (3, 0.5, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_count(&m, &mut rng).1, 1);
        }
    }

    #[test]
    fn empty_cohort() {
        let table = ExpertKnowledgeTable::default();
        let out = generate_cohort(
            &model(&[(4, 0.5, 1.0)]),
            &table,
            &uniform_marginals(&table),
            0,
            1,
            &CohortOptions::default(),
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn marginal_validation() {
        let table = ExpertKnowledgeTable::default();
        let base = model(&[(4, 0.5, 1.0)]);
        let mut m = uniform_marginals(&table);
        m.insert(Attribute::Gender, vec![("male".into(), 0.7), ("female".into(), 0.7)]);
        let err = generate_cohort(&base, &table, &m, 5, 1, &CohortOptions::default());
        assert!(matches!(err, Err(SimulateError::InvalidMarginals(_))));
        let mut m = uniform_marginals(&table);
        m.remove(&Attribute::Gender);
        let err = generate_cohort(&base, &table, &m, 5, 1, &CohortOptions::default());
        assert!(matches!(err, Err(SimulateError::InvalidMarginals(_))));
        let mut m = uniform_marginals(&table);
        m.insert(Attribute::Gender, vec![("robot".into(), 1.0)]);
        let err = generate_cohort(&base, &table, &m, 5, 1, &CohortOptions::default());
        assert!(matches!(err, Err(SimulateError::Modulation(_))));
    }

    #[test]
    fn csv_header_only_when_empty() {
        let mut buf = Vec::new();
        write_cohort_csv(&[], &[Attribute::Gender], false, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "gender,count,component_index,seed_path\n");
    }
}
