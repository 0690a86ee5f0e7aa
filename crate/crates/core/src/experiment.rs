//! Reference peak configuration and train/test/group evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::{empirical_pmf, Grouping, ParticipantRecord};
use crate::distributions::{histogram_intersection, Pmf};
use crate::fit::{MixtureModel, PeakSpec};
use crate::modulation::{modulate_model, Attribute, ExpertKnowledgeTable, ModulationError, Uncertainty};

/// Peaks of the NHANES eat-out training distribution with their variances.
///
/// The peak at 5 uses variance 0.4, the value consistent with its modulated
/// probabilities 0.878 (male) and 0.962 (female).
pub const REFERENCE_PEAKS: [(u32, f64); 8] = [
    (0, 0.2),
    (2, 1.0),
    (4, 0.8),
    (5, 0.4),
    (7, 0.4),
    (10, 0.1),
    (14, 0.1),
    (21, 0.1),
];

pub fn reference_peaks() -> Vec<PeakSpec> {
    REFERENCE_PEAKS.iter().map(|&(k, s)| PeakSpec::new(k, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvaluation {
    pub attribute: Attribute,
    pub group: String,
    pub alpha: f64,
    pub sign: Uncertainty,
    pub n_test: usize,
    /// `None` when the group has no test records.
    pub test_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_train: usize,
    pub n_test: usize,
    pub train_hi: f64,
    pub test_hi: f64,
    pub groups: Vec<GroupEvaluation>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    Pmf(#[from] crate::distributions::PmfError),
}

/// HI of the model against train and test, and of each group-modulated model
/// against that group's test records.
pub fn evaluate(
    model: &MixtureModel,
    train: &[ParticipantRecord],
    test: &[ParticipantRecord],
    table: &ExpertKnowledgeTable,
    grouping: &Grouping,
    attributes: &[Attribute],
) -> Result<Evaluation, EvaluateError> {
    let fitted = model.pmf();
    let train_hi = histogram_intersection(&fitted, &empirical_pmf(train)?)?;
    let test_hi = histogram_intersection(&fitted, &empirical_pmf(test)?)?;
    let mut groups = Vec::new();
    for &attr in attributes {
        for group in grouping.groups(attr) {
            let spec = table.resolve_spec(attr, group)?;
            let members: Vec<&ParticipantRecord> = test
                .iter()
                .filter(|r| grouping.group_of(r, attr) == group)
                .collect();
            let test_hi = if members.is_empty() {
                None
            } else {
                let observed = empirical_pmf(members.iter().copied())?;
                Some(histogram_intersection(&modulate_model(model, &spec).pmf(), &observed)?)
            };
            groups.push(GroupEvaluation {
                attribute: attr,
                group: group.to_string(),
                alpha: spec.alpha,
                sign: spec.sign,
                n_test: members.len(),
                test_hi,
            });
        }
    }
    Ok(Evaluation {
        n_train: train.len(),
        n_test: test.len(),
        train_hi,
        test_hi,
        groups,
    })
}

/// Test-set pmf of one group.
pub fn group_pmf(
    records: &[ParticipantRecord],
    grouping: &Grouping,
    attribute: Attribute,
    group: &str,
) -> Option<Pmf> {
    empirical_pmf(records.iter().filter(|r| grouping.group_of(r, attribute) == group)).ok()
}
