//! Expert-knowledge table and the uncertainty transform on component
//! probabilities.
//!
//! Each row of the table compares two dichotomized groups of one demographic
//! attribute. A group with *more* uncertainty has every component probability
//! pulled toward 0.5, `p̂ = (1 − α)(p − 0.5) + 0.5`; a group with *less*
//! uncertainty has it pushed away, `p̂ = (1 + α)(p − 0.5) + 0.5`, clamped to
//! `[0, 1]`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::MixtureModel;

pub const DEFAULT_TABLE_TOML: &str = include_str!("../configs/expert-table.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{attribute}` has no group `{group}` (expected `{a}` or `{b}`)")]
    UnknownGroup {
        attribute: Attribute,
        group: String,
        a: String,
        b: String,
    },
    #[error("unknown strength `{0}`")]
    UnknownStrength(String),
    #[error("invalid expert table: {0}")]
    InvalidTable(String),
    #[error("alpha {0} outside [0, 1)")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    Age,
    MaritalStatus,
    RaceEthnicity,
    Education,
    HouseholdIncome,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Gender,
        Attribute::Age,
        Attribute::MaritalStatus,
        Attribute::RaceEthnicity,
        Attribute::Education,
        Attribute::HouseholdIncome,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Age => "age",
            Attribute::MaritalStatus => "marital_status",
            Attribute::RaceEthnicity => "race_ethnicity",
            Attribute::Education => "education",
            Attribute::HouseholdIncome => "household_income",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = ModulationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['/', '-', ' '], "_");
        Ok(match norm.as_str() {
            "gender" | "sex" => Attribute::Gender,
            "age" => Attribute::Age,
            "marital_status" | "marital" => Attribute::MaritalStatus,
            "race_ethnicity" | "race" | "ethnicity" => Attribute::RaceEthnicity,
            "education" => Attribute::Education,
            "household_income" | "income" => Attribute::HouseholdIncome,
            _ => return Err(ModulationError::UnknownAttribute(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    More,
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRow {
    pub attribute: Attribute,
    pub group_a: String,
    pub group_b: String,
    pub direction: Direction,
    pub strength: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_override: Option<f64>,
}

impl ExpertRow {
    pub fn groups(&self) -> [&str; 2] {
        [&self.group_a, &self.group_b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertKnowledgeTable {
    #[serde(default = "default_strengths")]
    pub strengths: BTreeMap<String, f64>,
    pub rows: Vec<ExpertRow>,
}

fn default_strengths() -> BTreeMap<String, f64> {
    [("none", 0.0), ("very_small", 0.1), ("small", 0.15)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

impl Default for ExpertKnowledgeTable {
    fn default() -> Self {
        ExpertKnowledgeTable::from_toml(DEFAULT_TABLE_TOML).expect("shipped expert table is valid")
    }
}

impl ExpertKnowledgeTable {
    pub fn from_toml(text: &str) -> Result<Self, ModulationError> {
        let table: ExpertKnowledgeTable =
            toml::from_str(text).map_err(|e| ModulationError::InvalidTable(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    /// Reads the `attribute,group_a,group_b,direction,strength,alpha_override`
    /// CSV form, with the default strength map.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ModulationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let rec = rec.map_err(|e| ModulationError::InvalidTable(e.to_string()))?;
            rows.push(ExpertRow {
                attribute: rec.attribute.parse()?,
                group_a: rec.group_a,
                group_b: rec.group_b,
                direction: rec.direction,
                strength: rec.strength,
                alpha_override: rec.alpha_override,
            });
        }
        let table = ExpertKnowledgeTable {
            strengths: default_strengths(),
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), ModulationError> {
        for (name, &alpha) in &self.strengths {
            if !(0.0..1.0).contains(&alpha) {
                return Err(ModulationError::InvalidTable(format!(
                    "strength `{name}` maps to alpha {alpha} outside [0, 1)"
                )));
            }
        }
        let mut seen = Vec::new();
        for row in &self.rows {
            if seen.contains(&row.attribute) {
                return Err(ModulationError::InvalidTable(format!(
                    "attribute `{}` listed twice",
                    row.attribute
                )));
            }
            seen.push(row.attribute);
            if !self.strengths.contains_key(&row.strength) {
                return Err(ModulationError::UnknownStrength(row.strength.clone()));
            }
            if (row.direction == Direction::None) != (row.strength == "none") {
                return Err(ModulationError::InvalidTable(format!(
                    "attribute `{}`: direction none requires strength none and vice versa",
                    row.attribute
                )));
            }
            if let Some(a) = row.alpha_override {
                if !(0.0..1.0).contains(&a) {
                    return Err(ModulationError::InvalidAlpha(a));
                }
            }
            if row.group_a == row.group_b {
                return Err(ModulationError::InvalidTable(format!(
                    "attribute `{}` compares `{}` with itself",
                    row.attribute, row.group_a
                )));
            }
        }
        Ok(())
    }

    pub fn row(&self, attribute: Attribute) -> Option<&ExpertRow> {
        self.rows.iter().find(|r| r.attribute == attribute)
    }

    pub fn alpha_for(&self, strength: &str) -> Result<f64, ModulationError> {
        self.strengths
            .get(strength)
            .copied()
            .ok_or_else(|| ModulationError::UnknownStrength(strength.to_string()))
    }

    /// The modulation a member of `group` receives under `attribute`.
    pub fn resolve_spec(&self, attribute: Attribute, group: &str) -> Result<ModulationSpec, ModulationError> {
        let row = self
            .row(attribute)
            .ok_or_else(|| ModulationError::UnknownAttribute(attribute.to_string()))?;
        let is_a = if group == row.group_a {
            true
        } else if group == row.group_b {
            false
        } else {
            return Err(ModulationError::UnknownGroup {
                attribute,
                group: group.to_string(),
                a: row.group_a.clone(),
                b: row.group_b.clone(),
            });
        };
        let (alpha, sign) = match row.direction {
            Direction::None => (0.0, Uncertainty::More),
            Direction::Positive | Direction::Negative => {
                let alpha = match row.alpha_override {
                    Some(a) => a,
                    None => self.alpha_for(&row.strength)?,
                };
                let a_more = row.direction == Direction::Positive;
                let sign = if is_a == a_more {
                    Uncertainty::More
                } else {
                    Uncertainty::Less
                };
                (alpha, sign)
            }
        };
        Ok(ModulationSpec {
            attribute,
            group: group.to_string(),
            alpha,
            sign,
        })
    }
}

#[derive(Deserialize)]
struct CsvRow {
    attribute: String,
    group_a: String,
    group_b: String,
    direction: Direction,
    strength: String,
    #[serde(default)]
    alpha_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpec {
    pub attribute: Attribute,
    pub group: String,
    pub alpha: f64,
    pub sign: Uncertainty,
}

impl ModulationSpec {
    /// Multiplier applied to `p − 0.5`.
    pub fn factor(&self) -> f64 {
        match self.sign {
            Uncertainty::More => 1.0 - self.alpha,
            Uncertainty::Less => 1.0 + self.alpha,
        }
    }
}

fn apply_factor(p: f64, factor: f64) -> f64 {
    // (p - 0.5) + 0.5 can round away from p
    if factor == 1.0 {
        return p;
    }
    (factor * (p - 0.5) + 0.5).clamp(0.0, 1.0)
}

pub fn modulate_probability(p: f64, spec: &ModulationSpec) -> f64 {
    apply_factor(p, spec.factor())
}

/// Replaces every component probability; `n`, weights and support are kept.
pub fn modulate_model(model: &MixtureModel, spec: &ModulationSpec) -> MixtureModel {
    compose_modulations(model, std::slice::from_ref(spec))
}

/// Applies several attributes at once by multiplying their `(1 ± α)` factors.
///
/// The single-attribute case is what the table was built for; stacking
/// attributes assumes their effects are independent.
pub fn compose_modulations(model: &MixtureModel, specs: &[ModulationSpec]) -> MixtureModel {
    let factor: f64 = specs.iter().map(ModulationSpec::factor).product();
    let mut out = model.clone();
    for c in &mut out.components {
        c.p = apply_factor(c.p, factor);
    }
    out.provenance.modulation.extend(specs.iter().cloned());
    out
}
