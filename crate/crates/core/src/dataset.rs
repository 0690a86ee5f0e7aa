//! Survey ingestion: join demographics with the diet questionnaire, apply the
//! special-code policy, encode features, and split train/test.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{Pmf, MEALS_PER_WEEK};
use crate::modulation::Attribute;
use crate::xport::{Cell, XportTable};

pub const DEFAULT_VARIABLE_MAP_TOML: &str = include_str!("../configs/variable-map.toml");
/// Same map with the 2017-2018 cycle's marital status coding (`DEMO_J`).
pub const VARIABLE_MAP_2017_2018_TOML: &str = include_str!("../configs/variable-map-2017-2018.toml");

/// Default train/test split seed.
pub const DEFAULT_SPLIT_SEED: u64 = 2018;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("id {0} appears more than once in table `{1}`")]
    DuplicateId(u64, String),
    #[error("{field}: category `{value}` is not in the training layout")]
    UnknownCategory { field: Attribute, value: String },
    #[error("no records")]
    EmptyInput,
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("invalid variable map: {0}")]
    InvalidMap(String),
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Continuous,
    Categorical,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub code: i64,
    pub label: String,
}

/// How a field is split into the two groups compared by the expert table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Dichotomy {
    /// Listed labels form group a, everything else group b.
    Groups {
        group_a: String,
        a_levels: Vec<String>,
        group_b: String,
    },
    /// Values at or above the training median form group a.
    Median { group_a: String, group_b: String },
    /// Values at or above a fixed threshold form group a.
    Threshold {
        at: f64,
        group_a: String,
        group_b: String,
    },
    /// Ordinal levels at or above `level` form group a.
    MinLevel {
        level: String,
        group_a: String,
        group_b: String,
    },
}

impl Dichotomy {
    pub fn groups(&self) -> [&str; 2] {
        match self {
            Dichotomy::Groups { group_a, group_b, .. }
            | Dichotomy::Median { group_a, group_b }
            | Dichotomy::Threshold { group_a, group_b, .. }
            | Dichotomy::MinLevel { group_a, group_b, .. } => [group_a, group_b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub column: String,
    pub kind: FieldKind,
    #[serde(default)]
    pub levels: Vec<Level>,
    #[serde(default)]
    pub missing_codes: Vec<f64>,
    pub dichotomy: Dichotomy,
}

impl FieldSpec {
    fn label_for(&self, code: f64) -> Option<(usize, &str)> {
        self.levels
            .iter()
            .enumerate()
            .find(|(_, l)| l.code as f64 == code)
            .map(|(i, l)| (i, l.label.as_str()))
    }

    fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSpec {
    pub column: String,
    #[serde(default = "default_count_max")]
    pub max: u32,
    /// Code meaning "more than `max`", recorded as `max`.
    pub cap_code: Option<f64>,
    #[serde(default)]
    pub drop_codes: Vec<f64>,
}

fn default_count_max() -> u32 {
    MEALS_PER_WEEK as u32
}

/// Source columns and code policies for every participant field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMap {
    pub id: String,
    pub eat_out: CountSpec,
    pub gender: FieldSpec,
    pub age: FieldSpec,
    pub marital_status: FieldSpec,
    pub race_ethnicity: FieldSpec,
    pub education: FieldSpec,
    pub household_income: FieldSpec,
}

impl Default for VariableMap {
    fn default() -> Self {
        VariableMap::from_toml(DEFAULT_VARIABLE_MAP_TOML).expect("shipped variable map is valid")
    }
}

impl VariableMap {
    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let map: VariableMap =
            toml::from_str(text).map_err(|e| DatasetError::InvalidMap(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn field(&self, attribute: Attribute) -> &FieldSpec {
        match attribute {
            Attribute::Gender => &self.gender,
            Attribute::Age => &self.age,
            Attribute::MaritalStatus => &self.marital_status,
            Attribute::RaceEthnicity => &self.race_ethnicity,
            Attribute::Education => &self.education,
            Attribute::HouseholdIncome => &self.household_income,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for attr in Attribute::ALL {
            let f = self.field(attr);
            let bad = |msg: String| Err(DatasetError::InvalidMap(format!("{attr}: {msg}")));
            match f.kind {
                FieldKind::Categorical | FieldKind::Ordinal if f.levels.is_empty() => {
                    return bad("categorical and ordinal fields need levels".into())
                }
                FieldKind::Continuous if !f.levels.is_empty() => {
                    return bad("continuous fields take no levels".into())
                }
                _ => {}
            }
            match &f.dichotomy {
                Dichotomy::Groups { a_levels, .. } => {
                    if let Some(l) = a_levels.iter().find(|l| f.level_index(l).is_none()) {
                        return bad(format!("dichotomy names unknown level `{l}`"));
                    }
                }
                Dichotomy::MinLevel { level, .. } => {
                    if f.kind != FieldKind::Ordinal || f.level_index(level).is_none() {
                        return bad(format!("min_level `{level}` needs a matching ordinal level"));
                    }
                }
                Dichotomy::Median { .. } | Dichotomy::Threshold { .. } => {
                    if f.kind != FieldKind::Continuous {
                        return bad("median and threshold rules need a continuous field".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Source columns in the fixed export order.
    pub fn columns(&self) -> Vec<&str> {
        let mut cols = vec![self.id.as_str()];
        cols.extend(Attribute::ALL.iter().map(|&a| self.field(a).column.as_str()));
        cols.push(&self.eat_out.column);
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Continuous(f64),
    Category(String),
    /// Zero-based index into the ordinal levels.
    Ordinal(usize),
}

/// One cleaned survey respondent.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantRecord {
    pub id: u64,
    pub gender: FieldValue,
    pub age: FieldValue,
    pub marital_status: FieldValue,
    pub race_ethnicity: FieldValue,
    pub education: FieldValue,
    pub household_income: FieldValue,
    pub eat_out_count: u8,
}

impl ParticipantRecord {
    pub fn value(&self, attribute: Attribute) -> &FieldValue {
        match attribute {
            Attribute::Gender => &self.gender,
            Attribute::Age => &self.age,
            Attribute::MaritalStatus => &self.marital_status,
            Attribute::RaceEthnicity => &self.race_ethnicity,
            Attribute::Education => &self.education,
            Attribute::HouseholdIncome => &self.household_income,
        }
    }

    /// Re-expresses the record as a raw row with source codes.
    pub fn to_raw_row(&self, map: &VariableMap) -> RawRow {
        let mut cells = HashMap::new();
        for attr in Attribute::ALL {
            let spec = map.field(attr);
            let cell = match self.value(attr) {
                FieldValue::Continuous(x) => Cell::Number(*x),
                FieldValue::Category(label) => spec
                    .level_index(label)
                    .map_or(Cell::Missing, |i| Cell::Number(spec.levels[i].code as f64)),
                FieldValue::Ordinal(i) => Cell::Number(spec.levels[*i].code as f64),
            };
            cells.insert(spec.column.to_ascii_uppercase(), cell);
        }
        cells.insert(
            map.eat_out.column.to_ascii_uppercase(),
            Cell::Number(f64::from(self.eat_out_count)),
        );
        RawRow { id: self.id, cells }
    }
}

/// A joined row keyed by upper-cased column name.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub id: u64,
    pub cells: HashMap<String, Cell>,
}

impl RawRow {
    pub fn get(&self, column: &str) -> &Cell {
        self.cells
            .get(&column.to_ascii_uppercase())
            .unwrap_or(&Cell::Missing)
    }
}

fn id_of(cell: &Cell) -> Option<u64> {
    match cell {
        Cell::Number(x) if *x >= 0.0 && x.fract() == 0.0 => Some(*x as u64),
        Cell::Text(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn index_by_id(table: &XportTable, id_column: &str) -> Result<Vec<(u64, usize)>, DatasetError> {
    let col = table
        .column_index(id_column)
        .ok_or_else(|| DatasetError::MissingColumn(id_column.to_string()))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let Some(id) = id_of(&row[col]) else { continue };
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateId(id, table.member_name.clone()));
        }
        out.push((id, i));
    }
    Ok(out)
}

/// Inner join on the id column, in `demo` row order.
pub fn join_on_id(demo: &XportTable, dbq: &XportTable, id_column: &str) -> Result<Vec<RawRow>, DatasetError> {
    let demo_ids = index_by_id(demo, id_column)?;
    let dbq_index: HashMap<u64, usize> = index_by_id(dbq, id_column)?.into_iter().collect();
    let rows = demo_ids
        .into_iter()
        .filter_map(|(id, di)| {
            let qi = *dbq_index.get(&id)?;
            let mut cells = HashMap::new();
            for (table, row) in [(demo, di), (dbq, qi)] {
                for (var, cell) in table.variables.iter().zip(&table.rows[row]) {
                    cells.insert(var.name.to_ascii_uppercase(), cell.clone());
                }
            }
            Some(RawRow { id, cells })
        })
        .collect();
    Ok(rows)
}

/// Per-rule row accounting for one cleaning pass. Each dropped row is charged
/// to the first rule it fails.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_rows: usize,
    pub kept: usize,
    /// Rows whose count was the "more than max" code, recorded as max.
    pub capped: usize,
    pub dropped: BTreeMap<String, usize>,
}

impl CleanReport {
    fn drop(&mut self, rule: String) {
        *self.dropped.entry(rule).or_default() += 1;
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

fn clean_count(cell: &Cell, spec: &CountSpec) -> Result<(u8, bool), String> {
    let col = &spec.column;
    let Some(x) = cell.as_number() else {
        return Err(format!("{col}: missing"));
    };
    if spec.drop_codes.contains(&x) {
        return Err(format!("{col}: refused/don't know ({x})"));
    }
    if spec.cap_code == Some(x) {
        return Ok((spec.max as u8, true));
    }
    if x < 0.0 || x > f64::from(spec.max) || x.fract() != 0.0 {
        return Err(format!("{col}: out of range"));
    }
    Ok((x as u8, false))
}

fn clean_field(cell: &Cell, spec: &FieldSpec) -> Result<FieldValue, String> {
    let col = &spec.column;
    let Some(x) = cell.as_number() else {
        return Err(format!("{col}: missing"));
    };
    if spec.missing_codes.contains(&x) {
        return Err(format!("{col}: refused/don't know"));
    }
    match spec.kind {
        FieldKind::Continuous => Ok(FieldValue::Continuous(x)),
        FieldKind::Categorical => spec
            .label_for(x)
            .map(|(_, l)| FieldValue::Category(l.to_string()))
            .ok_or_else(|| format!("{col}: unknown code")),
        FieldKind::Ordinal => spec
            .label_for(x)
            .map(|(i, _)| FieldValue::Ordinal(i))
            .ok_or_else(|| format!("{col}: unknown code")),
    }
}

/// Applies the code policy and drops rows with any remaining missing value.
pub fn clean(rows: &[RawRow], map: &VariableMap) -> (Vec<ParticipantRecord>, CleanReport) {
    let mut report = CleanReport {
        input_rows: rows.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for row in rows {
        let (count, capped) = match clean_count(row.get(&map.eat_out.column), &map.eat_out) {
            Ok(c) => c,
            Err(rule) => {
                report.drop(rule);
                continue;
            }
        };
        let mut values = Vec::with_capacity(Attribute::ALL.len());
        let mut failed = None;
        for attr in Attribute::ALL {
            let spec = map.field(attr);
            match clean_field(row.get(&spec.column), spec) {
                Ok(v) => values.push(v),
                Err(rule) => {
                    failed = Some(rule);
                    break;
                }
            }
        }
        if let Some(rule) = failed {
            report.drop(rule);
            continue;
        }
        if capped {
            report.capped += 1;
        }
        let mut it = values.into_iter();
        let mut next = || it.next().expect("one value per attribute");
        records.push(ParticipantRecord {
            id: row.id,
            gender: next(),
            age: next(),
            marital_status: next(),
            race_ethnicity: next(),
            education: next(),
            household_income: next(),
            eat_out_count: count,
        });
    }
    report.kept = records.len();
    (records, report)
}

/// Join plus clean, with join sizes in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub demo_rows: usize,
    pub dbq_rows: usize,
    pub joined_rows: usize,
    pub clean: CleanReport,
}

pub fn ingest(
    demo: &XportTable,
    dbq: &XportTable,
    map: &VariableMap,
) -> Result<(Vec<ParticipantRecord>, IngestReport), DatasetError> {
    let joined = join_on_id(demo, dbq, &map.id)?;
    let (records, clean) = clean(&joined, map);
    Ok((
        records,
        IngestReport {
            demo_rows: demo.rows.len(),
            dbq_rows: dbq.rows.len(),
            joined_rows: joined.len(),
            clean,
        },
    ))
}

/// Deterministic shuffle split; `|test| = round(test_fraction · N)` and both
/// halves keep the input order.
pub fn split(
    records: &[ParticipantRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<ParticipantRecord>, Vec<ParticipantRecord>), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(test_fraction));
    }
    let n_test = (test_fraction * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; records.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = records
        .iter()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(r, _)| r.clone()).collect(),
        test.into_iter().map(|(r, _)| r.clone()).collect(),
    ))
}

/// Relative frequency of each eat-out count on `0..=21`.
pub fn empirical_pmf<'a, I>(records: I) -> Result<Pmf, DatasetError>
where
    I: IntoIterator<Item = &'a ParticipantRecord>,
{
    counts_pmf(records.into_iter().map(|r| r.eat_out_count as usize), MEALS_PER_WEEK)
}

/// Normalized histogram of counts on `0..=support_max`.
pub fn counts_pmf<I: IntoIterator<Item = usize>>(counts: I, support_max: usize) -> Result<Pmf, DatasetError> {
    let mut hist = vec![0u64; support_max + 1];
    let mut n = 0u64;
    for c in counts {
        hist[c.min(support_max)] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(DatasetError::EmptyInput);
    }
    Pmf::new(hist.iter().map(|&h| h as f64 / n as f64).collect())
        .map_err(|_| DatasetError::EmptyInput)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len() % 2 == 0 {
        (xs[mid - 1] + xs[mid]) / 2.0
    } else {
        xs[mid]
    })
}

/// Resolved group assignment for each attribute (medians frozen from train).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub thresholds: BTreeMap<Attribute, f64>,
    pub rules: BTreeMap<Attribute, Dichotomy>,
    levels: BTreeMap<Attribute, Vec<String>>,
}

impl Grouping {
    pub fn fit(train: &[ParticipantRecord], map: &VariableMap) -> Result<Self, DatasetError> {
        let mut thresholds = BTreeMap::new();
        let mut rules = BTreeMap::new();
        let mut levels = BTreeMap::new();
        for attr in Attribute::ALL {
            let spec = map.field(attr);
            match &spec.dichotomy {
                Dichotomy::Median { .. } => {
                    let xs = train
                        .iter()
                        .filter_map(|r| match r.value(attr) {
                            FieldValue::Continuous(x) => Some(*x),
                            _ => None,
                        })
                        .collect();
                    thresholds.insert(attr, median(xs).ok_or(DatasetError::EmptyInput)?);
                }
                Dichotomy::Threshold { at, .. } => {
                    thresholds.insert(attr, *at);
                }
                _ => {}
            }
            rules.insert(attr, spec.dichotomy.clone());
            levels.insert(attr, spec.levels.iter().map(|l| l.label.clone()).collect());
        }
        Ok(Grouping {
            thresholds,
            rules,
            levels,
        })
    }

    pub fn groups(&self, attribute: Attribute) -> [&str; 2] {
        self.rules[&attribute].groups()
    }

    pub fn group_of(&self, record: &ParticipantRecord, attribute: Attribute) -> &str {
        let rule = &self.rules[&attribute];
        let [a, b] = rule.groups();
        let in_a = match (rule, record.value(attribute)) {
            (Dichotomy::Groups { a_levels, .. }, FieldValue::Category(l)) => a_levels.contains(l),
            (Dichotomy::Groups { a_levels, .. }, FieldValue::Ordinal(i)) => {
                a_levels.contains(&self.levels[&attribute][*i])
            }
            (Dichotomy::Median { .. } | Dichotomy::Threshold { .. }, FieldValue::Continuous(x)) => {
                *x >= self.thresholds[&attribute]
            }
            (Dichotomy::MinLevel { level, .. }, FieldValue::Ordinal(i)) => {
                let at = self.levels[&attribute]
                    .iter()
                    .position(|l| l == level)
                    .unwrap_or(usize::MAX);
                *i >= at
            }
            _ => false,
        };
        if in_a {
            a
        } else {
            b
        }
    }

    /// Frequency of each group among `records`.
    pub fn marginals(&self, records: &[ParticipantRecord]) -> BTreeMap<Attribute, Vec<(String, f64)>> {
        let n = records.len().max(1) as f64;
        Attribute::ALL
            .iter()
            .map(|&attr| {
                let [a, b] = self.groups(attr);
                let in_a = records.iter().filter(|r| self.group_of(r, attr) == a).count() as f64;
                (attr, vec![(a.to_string(), in_a / n), (b.to_string(), 1.0 - in_a / n)])
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutEntry {
    Continuous { attribute: Attribute, min: f64, max: f64 },
    Categorical { attribute: Attribute, categories: Vec<String> },
    Ordinal { attribute: Attribute, levels: usize },
}

/// Feature layout frozen from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub entries: Vec<LayoutEntry>,
}

impl EncodingLayout {
    pub fn fit(train: &[ParticipantRecord], map: &VariableMap) -> Result<Self, DatasetError> {
        if train.is_empty() {
            return Err(DatasetError::EmptyInput);
        }
        let entries = Attribute::ALL
            .iter()
            .map(|&attribute| {
                let spec = map.field(attribute);
                match spec.kind {
                    FieldKind::Continuous => {
                        let (min, max) = train
                            .iter()
                            .filter_map(|r| match r.value(attribute) {
                                FieldValue::Continuous(x) => Some(*x),
                                _ => None,
                            })
                            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                                (lo.min(x), hi.max(x))
                            });
                        LayoutEntry::Continuous { attribute, min, max }
                    }
                    FieldKind::Categorical => {
                        let present: HashSet<&str> = train
                            .iter()
                            .filter_map(|r| match r.value(attribute) {
                                FieldValue::Category(c) => Some(c.as_str()),
                                _ => None,
                            })
                            .collect();
                        let categories = spec
                            .levels
                            .iter()
                            .filter(|l| present.contains(l.label.as_str()))
                            .map(|l| l.label.clone())
                            .collect();
                        LayoutEntry::Categorical { attribute, categories }
                    }
                    FieldKind::Ordinal => LayoutEntry::Ordinal {
                        attribute,
                        levels: spec.levels.len(),
                    },
                }
            })
            .collect();
        Ok(EncodingLayout { entries })
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for e in &self.entries {
            match e {
                LayoutEntry::Continuous { attribute, .. } | LayoutEntry::Ordinal { attribute, .. } => {
                    names.push(attribute.to_string())
                }
                LayoutEntry::Categorical { attribute, categories } => {
                    names.extend(categories.iter().map(|c| format!("{attribute}={c}")))
                }
            }
        }
        names
    }

    pub fn dim(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match e {
                LayoutEntry::Categorical { categories, .. } => categories.len(),
                _ => 1,
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Arc<[String]>,
}

/// Min-max scales continuous fields, one-hot encodes categories, and places
/// ordinal levels on the grid `{0, 1/(L−1), …, 1}`.
pub fn encode(record: &ParticipantRecord, layout: &EncodingLayout) -> Result<Vec<f64>, DatasetError> {
    let mut out = Vec::with_capacity(layout.dim());
    for entry in &layout.entries {
        match entry {
            LayoutEntry::Continuous { attribute, min, max } => {
                let x = match record.value(*attribute) {
                    FieldValue::Continuous(x) => *x,
                    other => {
                        return Err(DatasetError::UnknownCategory {
                            field: *attribute,
                            value: format!("{other:?}"),
                        })
                    }
                };
                let scaled = if max > min { (x - min) / (max - min) } else { 0.0 };
                out.push(scaled.clamp(0.0, 1.0));
            }
            LayoutEntry::Categorical { attribute, categories } => {
                let value = match record.value(*attribute) {
                    FieldValue::Category(c) => c.clone(),
                    other => format!("{other:?}"),
                };
                let hot = categories.iter().position(|c| *c == value).ok_or(
                    DatasetError::UnknownCategory {
                        field: *attribute,
                        value,
                    },
                )?;
                out.extend((0..categories.len()).map(|i| if i == hot { 1.0 } else { 0.0 }));
            }
            LayoutEntry::Ordinal { attribute, levels } => {
                let i = match record.value(*attribute) {
                    FieldValue::Ordinal(i) if *i < *levels => *i,
                    other => {
                        return Err(DatasetError::UnknownCategory {
                            field: *attribute,
                            value: format!("{other:?}"),
                        })
                    }
                };
                out.push(if *levels > 1 { i as f64 / (*levels - 1) as f64 } else { 0.0 });
            }
        }
    }
    Ok(out)
}

/// Encodes every record, in input order.
pub fn encode_all(records: &[ParticipantRecord], layout: &EncodingLayout) -> Result<Vec<FeatureVector>, DatasetError> {
    let names: Arc<[String]> = layout.coordinate_names().into();
    records
        .iter()
        .map(|r| {
            encode(r, layout).map(|values| FeatureVector {
                values,
                layout: Arc::clone(&names),
            })
        })
        .collect()
}

pub const CLEANED_HEADER: [&str; 8] = [
    "id",
    "gender",
    "age",
    "marital_status",
    "race_ethnicity",
    "education",
    "household_income",
    "eat_out_count",
];

fn render(value: &FieldValue, spec: &FieldSpec) -> String {
    match value {
        FieldValue::Continuous(x) => x.to_string(),
        FieldValue::Category(c) => c.clone(),
        FieldValue::Ordinal(i) => spec.levels[*i].label.clone(),
    }
}

fn parse_value(text: &str, spec: &FieldSpec, attr: Attribute) -> Result<FieldValue, DatasetError> {
    let unknown = || DatasetError::UnknownCategory {
        field: attr,
        value: text.to_string(),
    };
    match spec.kind {
        FieldKind::Continuous => text
            .parse()
            .map(FieldValue::Continuous)
            .map_err(|_| DatasetError::Csv(format!("{attr}: `{text}` is not a number"))),
        FieldKind::Categorical => spec
            .level_index(text)
            .map(|_| FieldValue::Category(text.to_string()))
            .ok_or_else(unknown),
        FieldKind::Ordinal => spec.level_index(text).map(FieldValue::Ordinal).ok_or_else(unknown),
    }
}

/// Writes cleaned records as `id, demographics…, eat_out_count`.
pub fn write_cleaned_csv<W: Write>(records: &[ParticipantRecord], map: &VariableMap, out: W) -> Result<(), DatasetError> {
    let csv_err = |e: csv::Error| DatasetError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CLEANED_HEADER).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.id.to_string()];
        row.extend(
            Attribute::ALL
                .iter()
                .map(|&a| render(r.value(a), map.field(a))),
        );
        row.push(r.eat_out_count.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DatasetError::Csv(e.to_string()))
}

pub fn read_cleaned_csv<R: Read>(input: R, map: &VariableMap) -> Result<Vec<ParticipantRecord>, DatasetError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| DatasetError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != CLEANED_HEADER {
        return Err(DatasetError::Csv(format!(
            "expected header {}",
            CLEANED_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let id = rec[0]
            .parse()
            .map_err(|_| DatasetError::Csv(format!("bad id `{}`", &rec[0])))?;
        let mut values = Vec::new();
        for (i, &attr) in Attribute::ALL.iter().enumerate() {
            values.push(parse_value(&rec[i + 1], map.field(attr), attr)?);
        }
        let count: u8 = rec[7]
            .parse()
            .ok()
            .filter(|&c: &u8| u32::from(c) <= map.eat_out.max)
            .ok_or_else(|| DatasetError::Csv(format!("bad count `{}`", &rec[7])))?;
        let mut it = values.into_iter();
        let mut next = || it.next().expect("six values");
        out.push(ParticipantRecord {
            id,
            gender: next(),
            age: next(),
            marital_status: next(),
            race_ethnicity: next(),
            education: next(),
            household_income: next(),
            eat_out_count: count,
        });
    }
    Ok(out)
}
