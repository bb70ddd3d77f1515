//! Criteria- and trial-level evaluation, per-trial breakdowns, generalizability
//! experiments and case reports.

pub mod aggregate;
pub mod case_report;
pub mod experiment;
pub mod metrics;

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::data::{criterion_index, Difficulty, MatchLabel, PairExample, Trial};
use crate::model::{MatchModel, ModelError};
use crate::training::{Features, TrainError};

pub use aggregate::{
    aggregate_labels, aggregate_pairs, aggregate_trial, trial_level_metrics, Semantics,
    TrialAggregation,
};
pub use case_report::{emit_case_report, CaseReport, Verdict};
pub use experiment::{
    run_generalizability, standard_splits, ExperimentReport, ModelRecipe, SplitRow, SplitSpec,
};
pub use metrics::{
    criteria_level_metrics, f1_score, Averaging, ConfusionMatrix, CriteriaMetrics, Level,
    MetricReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("predictions and gold are misaligned; missing: {}", .0.join(", "))]
    Misaligned(Vec<String>),
    #[error("trial {trial_id}: no prediction for criterion {criterion_id}")]
    MissingPrediction {
        trial_id: String,
        criterion_id: String,
    },
    #[error("pair references unknown criterion `{0}`")]
    Dangling(String),
    #[error("pair references unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("gold aggregated with {gold} semantics but predictions with {predicted}")]
    SemanticsMismatch {
        predicted: Semantics,
        gold: Semantics,
    },
    #[error("split {split}: trials {overlap:?} are in both train and test")]
    OverlappingSplit { split: String, overlap: Vec<String> },
    #[error("split {split}: {detail}")]
    BadSplit { split: String, detail: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Predicted copies of `pairs`; the label is the argmax class, and pairs
/// whose patient record is empty are predicted unknown.
pub fn predict_pairs(
    model: &MatchModel,
    features: &Features,
    pairs: &[PairExample],
) -> Result<Vec<PairExample>, EvalError> {
    let idx: Vec<(usize, usize)> = pairs
        .iter()
        .map(|p| {
            let patient = features
                .patient(&p.patient_id)
                .ok_or_else(|| EvalError::UnknownPatient(p.patient_id.clone()))?;
            let criterion = features
                .criterion(&p.criterion_id)
                .ok_or_else(|| EvalError::Dangling(p.criterion_id.clone()))?;
            Ok((patient, criterion))
        })
        .collect::<Result<_, EvalError>>()?;
    let probs = features.predict(model, &idx);
    Ok(pairs
        .iter()
        .zip(probs)
        .map(|(p, pr)| {
            let mut out = p.clone();
            out.label = pr.map_or(MatchLabel::Unknown, argmax);
            out
        })
        .collect())
}

fn argmax(p: [f64; 3]) -> MatchLabel {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    MatchLabel::from_index(best).expect("three classes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelChoice {
    Criteria,
    Trial,
    Both,
}

impl FromStr for LevelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "criteria" => Ok(Self::Criteria),
            "trial" => Ok(Self::Trial),
            "both" => Ok(Self::Both),
            other => Err(format!(
                "unknown level `{other}` (expected criteria, trial or both)"
            )),
        }
    }
}

/// Rows of `report.json`: criteria level in both averaging modes, then the
/// trial level, as selected.
pub fn evaluate(
    predictions: &[PairExample],
    gold: &[PairExample],
    trials: &[Trial],
    level: LevelChoice,
    semantics: Semantics,
) -> Result<Vec<MetricReport>, EvalError> {
    let mut rows = Vec::new();
    if level != LevelChoice::Trial {
        let m = criteria_level_metrics(predictions, gold)?;
        rows.push(m.match_positive);
        rows.push(m.macro_averaged);
    }
    if level != LevelChoice::Criteria {
        let g = aggregate_pairs(gold, trials, semantics)?;
        let p = aggregate_pairs(predictions, trials, semantics)?;
        rows.push(trial_level_metrics(&p, &g)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBreakdownRow {
    pub trial_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    pub report: MetricReport,
}

/// Criteria-level match-positive report per trial of the scored criterion,
/// ranked by F1 (descending) then trial id. Listed trials without pairs are
/// omitted with a warning.
pub fn per_trial_breakdown(
    predictions: &[PairExample],
    gold: &[PairExample],
    trials: &[Trial],
    difficulty: &BTreeMap<String, Difficulty>,
) -> Result<Vec<TrialBreakdownRow>, EvalError> {
    let aligned = metrics::align(predictions, gold)?;
    let index = criterion_index(trials);
    let mut per: HashMap<&str, ConfusionMatrix> = HashMap::new();
    for (g, (gl, pl)) in gold.iter().zip(aligned) {
        let c = index
            .get(g.criterion_id.as_str())
            .ok_or_else(|| EvalError::Dangling(g.criterion_id.clone()))?;
        per.entry(c.trial_id.as_str()).or_default().add(gl, pl);
    }
    for t in trials {
        if !per.contains_key(t.trial_id.as_str()) {
            warn!(trial = %t.trial_id, "no evaluated pairs; omitted from breakdown");
        }
    }
    let mut rows: Vec<TrialBreakdownRow> = per
        .into_iter()
        .map(|(t, cm)| TrialBreakdownRow {
            trial_id: t.to_string(),
            difficulty: difficulty.get(t).copied(),
            report: MetricReport::match_positive(Level::Criteria, &cm),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.report
            .f1
            .total_cmp(&a.report.f1)
            .then_with(|| a.trial_id.cmp(&b.trial_id))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::small_corpus;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax([0.2, 0.5, 0.3]), MatchLabel::Mismatch);
        assert_eq!(argmax([0.4, 0.4, 0.2]), MatchLabel::Match);
    }

    #[test]
    fn breakdown_keys_are_trials_present() {
        let c = small_corpus();
        let rows = per_trial_breakdown(&c.pairs, &c.pairs, &c.trials, &BTreeMap::new()).unwrap();
        let mut keys: Vec<&str> = rows.iter().map(|r| r.trial_id.as_str()).collect();
        keys.sort_unstable();
        let index = c.criterion_index();
        let mut expect: Vec<&str> = c
            .pairs
            .iter()
            .map(|p| index[p.criterion_id.as_str()].trial_id.as_str())
            .collect();
        expect.sort_unstable();
        expect.dedup();
        assert_eq!(keys, expect);
    }

    #[test]
    fn report_rows_by_level() {
        let c = small_corpus();
        let both = evaluate(
            &c.pairs,
            &c.pairs,
            &c.trials,
            LevelChoice::Both,
            Semantics::Eligibility,
        )
        .unwrap();
        assert_eq!(both.len(), 3);
        assert_eq!(both[2].level, Level::Trial);
        let crit = evaluate(
            &c.pairs,
            &c.pairs,
            &c.trials,
            LevelChoice::Criteria,
            Semantics::Eligibility,
        )
        .unwrap();
        assert_eq!(crit.len(), 2);
    }
}
