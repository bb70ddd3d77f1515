//! Labeled pair construction with per-group unknown injection.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use thiserror::Error;

use crate::data::{
    criterion_index, Criterion, CriterionKind, MatchLabel, PairExample, PatientRecord, Trial,
};
use crate::seed::rng_for;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("unknown injection needs at least two trials, got {0}")]
    TooFewTrials(usize),
    #[error("no {kind} criteria outside trial {trial_id} to inject as unknown")]
    NoCandidates {
        kind: CriterionKind,
        trial_id: String,
    },
    #[error("gold label references unknown {what} `{id}`")]
    Dangling { what: &'static str, id: String },
    #[error(
        "gold label for {patient_id}/{criterion_id} is `unknown`; gold must be match or mismatch"
    )]
    UnknownGold {
        patient_id: String,
        criterion_id: String,
    },
}

/// Emit gold match/mismatch pairs and, for every (patient, trial) group, one
/// inclusion and one exclusion criterion drawn uniformly from the other
/// trials, labeled `unknown` with the group's trial as origin.
pub fn build_pair_dataset(
    patients: &[PatientRecord],
    trials: &[Trial],
    gold: &[PairExample],
    seed: u64,
) -> Result<Vec<PairExample>, PairError> {
    if trials.len() < 2 {
        return Err(PairError::TooFewTrials(trials.len()));
    }
    let criteria = criterion_index(trials);
    let patient_ids: HashSet<&str> = patients.iter().map(|p| p.patient_id.as_str()).collect();

    // groups in first-seen order
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str), Vec<&PairExample>> = HashMap::new();
    for g in gold {
        if g.label == MatchLabel::Unknown {
            return Err(PairError::UnknownGold {
                patient_id: g.patient_id.clone(),
                criterion_id: g.criterion_id.clone(),
            });
        }
        if !patient_ids.contains(g.patient_id.as_str()) {
            return Err(PairError::Dangling {
                what: "patient",
                id: g.patient_id.clone(),
            });
        }
        let c = criteria
            .get(g.criterion_id.as_str())
            .ok_or_else(|| PairError::Dangling {
                what: "criterion",
                id: g.criterion_id.clone(),
            })?;
        let key = (g.patient_id.as_str(), c.trial_id.as_str());
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(g);
    }

    let mut candidates: HashMap<(&str, CriterionKind), Vec<&Criterion>> = HashMap::new();
    for t in trials {
        for kind in [CriterionKind::Inclusion, CriterionKind::Exclusion] {
            let pool = trials
                .iter()
                .filter(|o| o.trial_id != t.trial_id)
                .flat_map(|o| match kind {
                    CriterionKind::Inclusion => o.inclusion.iter(),
                    CriterionKind::Exclusion => o.exclusion.iter(),
                })
                .filter(|c| c.provenance.is_original())
                .collect();
            candidates.insert((t.trial_id.as_str(), kind), pool);
        }
    }

    let mut rng = rng_for(seed, "unknown-injection");
    let mut out = Vec::with_capacity(gold.len() + 2 * order.len());
    for key @ (patient_id, trial_id) in order {
        out.extend(groups[&key].iter().map(|g| {
            let mut p = (*g).clone();
            p.origin_trial_id = None;
            p
        }));
        for kind in [CriterionKind::Inclusion, CriterionKind::Exclusion] {
            let pool = candidates
                .get(&(trial_id, kind))
                .filter(|p| !p.is_empty())
                .ok_or_else(|| PairError::NoCandidates {
                    kind,
                    trial_id: trial_id.to_string(),
                })?;
            let picked = pool.choose(&mut rng).expect("pool non-empty");
            out.push(
                PairExample::new(patient_id, &picked.criterion_id, MatchLabel::Unknown)
                    .with_origin(trial_id),
            );
        }
    }
    Ok(out)
}
