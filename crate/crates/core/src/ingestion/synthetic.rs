//! Seeded synthetic corpora standing in for private EHR data.
//!
//! Patients hold a random subset of the closed concept vocabulary. Each trial
//! draws distinct concepts and phrases one criterion per concept. Easy trials
//! quote the record phrase, so matching criteria share surface tokens with
//! the patient entries; hard trials use a paraphrase with no shared tokens.
//! A criterion's gold label is `match` exactly when the patient's record
//! holds its concept.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    Criterion, CriterionKind, Difficulty, MatchLabel, PairExample, PatientRecord, Provenance, Trial,
};
use crate::ingestion::vocabulary::{frames, Category, CONCEPTS};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    /// Every patient is paired with every trial.
    #[default]
    All,
    /// Each patient is paired with a subset of trials sized to `target_pairs`.
    Enrolled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusConfig {
    pub n_patients: usize,
    pub n_trials: usize,
    pub n_criteria_total: usize,
    pub target_pairs: usize,
    pub seed: u64,
    /// Fraction of trials (and so of criteria) generated as hard.
    pub difficulty_mix: f64,
    pub pairing: PairingMode,
    /// Probability that a patient's record holds any given concept.
    pub concept_prevalence: f64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            n_patients: 825,
            n_trials: 6,
            n_criteria_total: 150,
            target_pairs: 100_000,
            seed: 7,
            difficulty_mix: 0.5,
            pairing: PairingMode::All,
            concept_prevalence: 0.3,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("n_criteria_total ({total}) must be at least n_trials ({trials})")]
    TooFewCriteria { total: usize, trials: usize },
    #[error("{per_trial} criteria per trial exceeds the {vocab}-concept vocabulary")]
    VocabularyExhausted { per_trial: usize, vocab: usize },
    #[error("difficulty_mix {0} outside [0, 1]")]
    DifficultyMix(f64),
    #[error("concept_prevalence {0} outside (0, 1)")]
    Prevalence(f64),
    #[error("target_pairs {target} exceeds the {max} pairs these counts can produce")]
    Infeasible { target: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub patients: Vec<PatientRecord>,
    pub trials: Vec<Trial>,
    /// Within-trial match/mismatch labels for every emitted (patient, trial) group.
    pub gold: Vec<PairExample>,
    pub difficulty: BTreeMap<String, Difficulty>,
}

impl SyntheticCorpusConfig {
    fn criteria_per_trial(&self) -> Vec<usize> {
        let base = self.n_criteria_total / self.n_trials;
        let extra = self.n_criteria_total % self.n_trials;
        (0..self.n_trials)
            .map(|i| base + usize::from(i < extra))
            .collect()
    }

    /// Largest pair count reachable: every patient in every trial, plus two
    /// injected unknowns per group.
    pub fn max_pairs(&self) -> usize {
        self.n_patients * (self.n_criteria_total + 2 * self.n_trials)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_patients", self.n_patients),
            ("n_trials", self.n_trials),
            ("n_criteria_total", self.n_criteria_total),
            ("target_pairs", self.target_pairs),
        ] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.n_criteria_total < self.n_trials {
            return Err(ConfigError::TooFewCriteria {
                total: self.n_criteria_total,
                trials: self.n_trials,
            });
        }
        let per_trial = self.criteria_per_trial()[0];
        if per_trial > CONCEPTS.len() {
            return Err(ConfigError::VocabularyExhausted {
                per_trial,
                vocab: CONCEPTS.len(),
            });
        }
        if !(0.0..=1.0).contains(&self.difficulty_mix) {
            return Err(ConfigError::DifficultyMix(self.difficulty_mix));
        }
        if !(self.concept_prevalence > 0.0 && self.concept_prevalence < 1.0) {
            return Err(ConfigError::Prevalence(self.concept_prevalence));
        }
        if self.target_pairs > self.max_pairs() {
            return Err(ConfigError::Infeasible {
                target: self.target_pairs,
                max: self.max_pairs(),
            });
        }
        Ok(())
    }
}

const DOSES: &[&str] = &["5 mg", "10 mg", "20 mg", "40 mg", "81 mg", "100 mg"];
const FORMS: &[&str] = &["oral tablet", "capsule", "injection", "solution"];

fn record_entry<R: Rng>(concept: usize, rng: &mut R) -> String {
    let c = &CONCEPTS[concept];
    match c.category {
        Category::Medication => format!(
            "{} {} {} [{}]",
            c.record_phrase,
            DOSES.choose(rng).unwrap(),
            FORMS.choose(rng).unwrap(),
            c.code
        ),
        _ => format!("{} [{}]", c.record_phrase, c.code),
    }
}

fn criterion_text<R: Rng>(concept: usize, kind: CriterionKind, hard: bool, rng: &mut R) -> String {
    let c = &CONCEPTS[concept];
    let f = frames(c.category);
    let frame_list = match (kind, hard) {
        (CriterionKind::Inclusion, false) => f.easy_inclusion,
        (CriterionKind::Exclusion, false) => f.easy_exclusion,
        (CriterionKind::Inclusion, true) => f.hard_inclusion,
        (CriterionKind::Exclusion, true) => f.hard_exclusion,
    };
    let phrase = if hard {
        *c.paraphrases.choose(rng).unwrap()
    } else {
        c.record_phrase
    };
    frame_list.choose(rng).unwrap().replace("{}", phrase)
}

pub fn generate_synthetic_corpus(
    config: &SyntheticCorpusConfig,
) -> Result<SyntheticCorpus, ConfigError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, "generate");

    let n_hard = (config.difficulty_mix * config.n_trials as f64).round() as usize;
    let mut order: Vec<usize> = (0..config.n_trials).collect();
    order.shuffle(&mut rng);
    let hard: HashSet<usize> = order[..n_hard].iter().copied().collect();

    let mut trials = Vec::with_capacity(config.n_trials);
    let mut difficulty = BTreeMap::new();
    // (trial index, concept) for every criterion, in trial order
    let mut criterion_concepts: Vec<Vec<usize>> = Vec::new();
    let mut next_id = 1;
    for (t, &m) in config.criteria_per_trial().iter().enumerate() {
        let trial_id = format!("NCT{:08}", 90_000_000 + t + 1);
        let is_hard = hard.contains(&t);
        difficulty.insert(
            trial_id.clone(),
            if is_hard {
                Difficulty::Hard
            } else {
                Difficulty::Easy
            },
        );
        let concepts: Vec<usize> = rand::seq::index::sample(&mut rng, CONCEPTS.len(), m).into_vec();
        let n_inclusion = (m * 3).div_ceil(5);
        let mut trial = Trial::new(&trial_id);
        for (k, &concept) in concepts.iter().enumerate() {
            let kind = if k < n_inclusion {
                CriterionKind::Inclusion
            } else {
                CriterionKind::Exclusion
            };
            trial.push(Criterion {
                criterion_id: format!("C{next_id:04}"),
                trial_id: trial_id.clone(),
                kind,
                text: criterion_text(concept, kind, is_hard, &mut rng),
                provenance: Provenance::Original,
            });
            next_id += 1;
        }
        // Trial::push keeps inclusion before exclusion, matching `concepts` order.
        criterion_concepts.push(concepts);
        trials.push(trial);
    }

    let mut patients = Vec::with_capacity(config.n_patients);
    let mut holdings: Vec<HashSet<usize>> = Vec::with_capacity(config.n_patients);
    for p in 0..config.n_patients {
        let mut held: Vec<usize> = (0..CONCEPTS.len())
            .filter(|_| rng.random_bool(config.concept_prevalence))
            .collect();
        if held.is_empty() {
            held.push(rng.random_range(0..CONCEPTS.len()));
        }
        held.shuffle(&mut rng);
        let mut record = PatientRecord {
            patient_id: format!("P{:04}", p + 1),
            diagnoses: Vec::new(),
            medications: Vec::new(),
            procedures: Vec::new(),
        };
        for &c in &held {
            let entry = record_entry(c, &mut rng);
            match CONCEPTS[c].category {
                Category::Diagnosis => record.diagnoses.push(entry),
                Category::Medication => record.medications.push(entry),
                Category::Procedure => record.procedures.push(entry),
            }
        }
        patients.push(record);
        holdings.push(held.into_iter().collect());
    }

    let enrolled = enrollment(config, &trials, &mut rng);
    let mut gold = Vec::new();
    for (p, patient) in patients.iter().enumerate() {
        for &t in &enrolled[p] {
            for (criterion, concept) in trials[t].criteria().zip(&criterion_concepts[t]) {
                let label = if holdings[p].contains(concept) {
                    MatchLabel::Match
                } else {
                    MatchLabel::Mismatch
                };
                gold.push(PairExample::new(
                    &patient.patient_id,
                    &criterion.criterion_id,
                    label,
                ));
            }
        }
    }

    Ok(SyntheticCorpus {
        patients,
        trials,
        gold,
        difficulty,
    })
}

/// Trial indices each patient is paired with.
fn enrollment<R: Rng>(
    config: &SyntheticCorpusConfig,
    trials: &[Trial],
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..trials.len()).collect();
    match config.pairing {
        PairingMode::All => vec![all; config.n_patients],
        PairingMode::Enrolled => {
            let mean_group = config.max_pairs() as f64 / (config.n_patients * trials.len()) as f64;
            let per_patient = (config.target_pairs as f64
                / (config.n_patients as f64 * mean_group))
                .clamp(1.0, trials.len() as f64);
            let base = per_patient.floor() as usize;
            let frac = per_patient - base as f64;
            (0..config.n_patients)
                .map(|_| {
                    let k = (base + usize::from(rng.random_bool(frac))).min(trials.len());
                    let mut picked = rand::seq::index::sample(rng, trials.len(), k).into_vec();
                    picked.sort_unstable();
                    picked
                })
                .collect()
        }
    }
}
