//! Binomial-mixture simulator for weekly eat-out counts.
//!
//! The pipeline reads NHANES demographic and diet-behavior files
//! ([`xport`], [`dataset`]), fits a mixture of binomials anchored at chosen
//! peaks of the count distribution ([`fit`]), shifts component probabilities
//! toward or away from 0.5 for demographic groups according to an
//! expert-knowledge table ([`modulation`]), and samples synthetic cohorts
//! ([`simulate`]).

pub mod cli;
pub mod dataset;
pub mod distributions;
pub mod experiment;
pub mod fit;
pub mod modulation;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod xport;

pub use distributions::{histogram_intersection, BinomialComponent, Pmf};
pub use fit::{MixtureModel, PeakSpec};
pub use modulation::{Attribute, ExpertKnowledgeTable, ModulationSpec};
