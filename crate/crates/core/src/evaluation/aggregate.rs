use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, Level, MetricReport};
use super::EvalError;
use crate::data::{criterion_index, CriterionKind, MatchLabel, PairExample, Trial};

/// How criterion predictions combine into a trial decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    /// Every inclusion criterion predicted match and every exclusion
    /// criterion predicted mismatch.
    #[default]
    Eligibility,
    /// Every criterion of either kind predicted match.
    StrictAllMatch,
}

impl FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eligibility" => Ok(Self::Eligibility),
            "strict" | "strict_all_match" => Ok(Self::StrictAllMatch),
            other => Err(format!(
                "unknown semantics `{other}` (expected eligibility or strict)"
            )),
        }
    }
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Eligibility => "eligibility",
            Self::StrictAllMatch => "strict_all_match",
        })
    }
}

impl Semantics {
    /// The prediction a criterion of `kind` needs for the trial to match.
    pub fn required(self, kind: CriterionKind) -> MatchLabel {
        match (self, kind) {
            (Self::Eligibility, CriterionKind::Exclusion) => MatchLabel::Mismatch,
            _ => MatchLabel::Match,
        }
    }
}

pub fn aggregate_labels(
    inclusion: &[MatchLabel],
    exclusion: &[MatchLabel],
    semantics: Semantics,
) -> MatchLabel {
    let ok = inclusion
        .iter()
        .all(|l| *l == semantics.required(CriterionKind::Inclusion))
        && exclusion
            .iter()
            .all(|l| *l == semantics.required(CriterionKind::Exclusion));
    if ok {
        MatchLabel::Match
    } else {
        MatchLabel::Mismatch
    }
}

/// Decision for one (patient, trial) from predictions keyed by criterion id.
/// Augmented criteria are ignored; every original criterion must be present.
pub fn aggregate_trial(
    trial: &Trial,
    predictions: &HashMap<&str, MatchLabel>,
    semantics: Semantics,
) -> Result<MatchLabel, EvalError> {
    let lookup = |kind: CriterionKind| -> Result<Vec<MatchLabel>, EvalError> {
        trial
            .original_criteria()
            .filter(|c| c.kind == kind)
            .map(|c| {
                predictions
                    .get(c.criterion_id.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::MissingPrediction {
                        trial_id: trial.trial_id.clone(),
                        criterion_id: c.criterion_id.clone(),
                    })
            })
            .collect()
    };
    Ok(aggregate_labels(
        &lookup(CriterionKind::Inclusion)?,
        &lookup(CriterionKind::Exclusion)?,
        semantics,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialAggregation {
    pub semantics: Semantics,
    /// Keyed by (patient_id, trial_id).
    pub decisions: BTreeMap<(String, String), MatchLabel>,
}

/// Aggregate every (patient, trial) group present in `pairs`. Only pairs on
/// a trial's own original criteria count; injected cross-trial pairs do not.
pub fn aggregate_pairs(
    pairs: &[PairExample],
    trials: &[Trial],
    semantics: Semantics,
) -> Result<TrialAggregation, EvalError> {
    let index = criterion_index(trials);
    let by_id: HashMap<&str, &Trial> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    let mut groups: BTreeMap<(String, String), HashMap<&str, MatchLabel>> = BTreeMap::new();
    for p in pairs {
        let c = index
            .get(p.criterion_id.as_str())
            .ok_or_else(|| EvalError::Dangling(p.criterion_id.clone()))?;
        if !c.provenance.is_original() || p.group_trial(c) != c.trial_id {
            continue;
        }
        groups
            .entry((p.patient_id.clone(), c.trial_id.clone()))
            .or_default()
            .insert(c.criterion_id.as_str(), p.label);
    }
    let mut decisions = BTreeMap::new();
    for (key, preds) in groups {
        let trial = by_id[key.1.as_str()];
        let d = aggregate_trial(trial, &preds, semantics)?;
        decisions.insert(key, d);
    }
    Ok(TrialAggregation {
        semantics,
        decisions,
    })
}

pub fn trial_level_metrics(
    predicted: &TrialAggregation,
    gold: &TrialAggregation,
) -> Result<MetricReport, EvalError> {
    if predicted.semantics != gold.semantics {
        return Err(EvalError::SemanticsMismatch {
            predicted: predicted.semantics,
            gold: gold.semantics,
        });
    }
    if gold.decisions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut missing: Vec<String> = gold
        .decisions
        .keys()
        .filter(|k| !predicted.decisions.contains_key(*k))
        .map(|(p, t)| format!("prediction for {p}/{t}"))
        .collect();
    missing.extend(
        predicted
            .decisions
            .keys()
            .filter(|k| !gold.decisions.contains_key(*k))
            .map(|(p, t)| format!("gold for {p}/{t}")),
    );
    if !missing.is_empty() {
        return Err(EvalError::Misaligned(missing));
    }
    let cm = ConfusionMatrix::from_labels(
        gold.decisions
            .iter()
            .map(|(k, g)| (*g, predicted.decisions[k])),
    );
    Ok(MetricReport::match_positive(Level::Trial, &cm))
}
