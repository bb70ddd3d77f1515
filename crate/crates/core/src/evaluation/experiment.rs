use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{criteria_level_metrics, predict_pairs, EvalError, TrialBreakdownRow};
use crate::data::{criterion_index, Difficulty, PairExample, PatientRecord, Trial};
use crate::model::{EncoderConfig, MatchModel, TextEncoder};
use crate::objective::LossConfig;
use crate::training::{train, TrainConfig, TrainingSet};

/// F1 below which a trial counts as hard when labeling from results.
pub const HARD_F1_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub train_trials: BTreeSet<String>,
    pub test_trials: BTreeSet<String>,
    #[serde(default)]
    pub difficulty_labels: BTreeMap<String, Difficulty>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let overlap: Vec<String> = self
            .train_trials
            .intersection(&self.test_trials)
            .cloned()
            .collect();
        if !overlap.is_empty() {
            return Err(EvalError::OverlappingSplit {
                split: self.name.clone(),
                overlap,
            });
        }
        if self.train_trials.is_empty() || self.test_trials.is_empty() {
            return Err(EvalError::BadSplit {
                split: self.name.clone(),
                detail: "train and test trial sets must be non-empty".into(),
            });
        }
        Ok(())
    }
}

/// Label trials from a vanilla per-trial breakdown.
pub fn difficulty_from_breakdown(
    rows: &[TrialBreakdownRow],
    threshold: f64,
) -> BTreeMap<String, Difficulty> {
    rows.iter()
        .map(|r| {
            let d = if r.report.f1 < threshold {
                Difficulty::Hard
            } else {
                Difficulty::Easy
            };
            (r.trial_id.clone(), d)
        })
        .collect()
}

/// The three generalizability cases over labeled trials, in id order:
/// easy to held-out easy, easy to hard, and easy plus part of the hard
/// trials to the remaining hard ones. Cases without enough trials are
/// skipped with a warning.
pub fn standard_splits(difficulty: &BTreeMap<String, Difficulty>) -> Vec<SplitSpec> {
    let of = |d: Difficulty| -> Vec<String> {
        difficulty
            .iter()
            .filter(|(_, v)| **v == d)
            .map(|(k, _)| k.clone())
            .collect()
    };
    let (easy, hard) = (of(Difficulty::Easy), of(Difficulty::Hard));
    let split = |name: &str, train: &[String], test: &[String]| SplitSpec {
        name: name.to_string(),
        train_trials: train.iter().cloned().collect(),
        test_trials: test.iter().cloned().collect(),
        difficulty_labels: difficulty.clone(),
    };
    let mut out = Vec::new();
    if easy.len() >= 2 {
        let (train, test) = easy.split_at(easy.len() - 1);
        out.push(split("case1_easy_to_easy", train, test));
    } else {
        warn!("case 1 needs at least two easy trials; skipped");
    }
    if !easy.is_empty() && !hard.is_empty() {
        out.push(split("case2_easy_to_hard", &easy, &hard));
    } else {
        warn!("case 2 needs easy and hard trials; skipped");
    }
    if !easy.is_empty() && hard.len() >= 2 {
        let (hard_train, test) = hard.split_at(hard.len() / 2);
        let train: Vec<String> = easy.iter().chain(hard_train).cloned().collect();
        out.push(split("case3_mixed_to_hard", &train, test));
    } else {
        warn!("case 3 needs easy trials and at least two hard trials; skipped");
    }
    out
}

/// Everything needed to build and train a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelRecipe {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl ModelRecipe {
    pub fn fresh_model(&self) -> Result<MatchModel, EvalError> {
        Ok(MatchModel::new(self.encoder.clone(), self.train.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub name: String,
    pub train_trials: BTreeSet<String>,
    pub test_trials: BTreeSet<String>,
    pub vanilla: SplitMetrics,
    pub augmented: Option<SplitMetrics>,
    /// Augmented F1 minus vanilla F1.
    pub delta_f1: Option<f64>,
    #[serde(skip)]
    pub vanilla_predictions: Vec<PairExample>,
    #[serde(skip)]
    pub augmented_predictions: Option<Vec<PairExample>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub rows: Vec<SplitRow>,
}

/// Trials and pairs of one training corpus.
#[derive(Debug, Clone, Copy)]
pub struct CorpusView<'a> {
    pub trials: &'a [Trial],
    pub pairs: &'a [PairExample],
}

/// Pairs whose criterion and generating group both lie in `trials`.
fn pairs_within<'a>(
    view: CorpusView<'a>,
    trials: &BTreeSet<String>,
    originals_only: bool,
) -> Result<Vec<PairExample>, EvalError> {
    let index = criterion_index(view.trials);
    let mut out = Vec::new();
    for p in view.pairs {
        let c = index
            .get(p.criterion_id.as_str())
            .ok_or_else(|| EvalError::Dangling(p.criterion_id.clone()))?;
        if originals_only && !c.provenance.is_original() {
            continue;
        }
        if trials.contains(&c.trial_id) && trials.contains(p.group_trial(c)) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn train_and_score(
    encoder: &dyn TextEncoder,
    patients: &[PatientRecord],
    view: CorpusView<'_>,
    split: &SplitSpec,
    test: &[PairExample],
    recipe: &ModelRecipe,
) -> Result<(SplitMetrics, Vec<PairExample>), EvalError> {
    let train_pairs = pairs_within(view, &split.train_trials, false)?;
    let set = TrainingSet::new(encoder, patients, view.trials, &train_pairs)?;
    let mut model = recipe.fresh_model()?;
    train(&mut model, &set, &recipe.loss, &recipe.train, None)?;
    let predictions = predict_pairs(&model, &set.features, test)?;
    let m = criteria_level_metrics(&predictions, test)?;
    Ok((
        SplitMetrics {
            precision: m.match_positive.precision,
            recall: m.match_positive.recall,
            f1: m.match_positive.f1,
            macro_f1: m.macro_averaged.f1,
            n_train: train_pairs.len(),
            n_test: test.len(),
        },
        predictions,
    ))
}

/// Train a fresh model per split on its train trials and score the original
/// criteria of its test trials; with an augmented corpus, repeat the split on
/// it and record the F1 difference. Test pairs always come from `vanilla`.
pub fn run_generalizability(
    encoder: &dyn TextEncoder,
    patients: &[PatientRecord],
    vanilla: CorpusView<'_>,
    augmented: Option<CorpusView<'_>>,
    recipe: &ModelRecipe,
    splits: &[SplitSpec],
) -> Result<ExperimentReport, EvalError> {
    let known: HashMap<&str, ()> = vanilla
        .trials
        .iter()
        .map(|t| (t.trial_id.as_str(), ()))
        .collect();
    let mut rows = Vec::with_capacity(splits.len());
    for split in splits {
        split.validate()?;
        if let Some(t) = split
            .train_trials
            .iter()
            .chain(&split.test_trials)
            .find(|t| !known.contains_key(t.as_str()))
        {
            return Err(EvalError::BadSplit {
                split: split.name.clone(),
                detail: format!("unknown trial {t}"),
            });
        }
        let test = pairs_within(vanilla, &split.test_trials, true)?;
        if test.is_empty() {
            return Err(EvalError::BadSplit {
                split: split.name.clone(),
                detail: "no test pairs".into(),
            });
        }
        let (v, vanilla_predictions) =
            train_and_score(encoder, patients, vanilla, split, &test, recipe)?;
        let (a, augmented_predictions) = match augmented {
            Some(view) => {
                let (m, p) = train_and_score(encoder, patients, view, split, &test, recipe)?;
                (Some(m), Some(p))
            }
            None => (None, None),
        };
        let delta_f1 = a.as_ref().map(|a| a.f1 - v.f1);
        info!(split = %split.name, vanilla_f1 = v.f1, augmented_f1 = a.as_ref().map(|a| a.f1), "split done");
        rows.push(SplitRow {
            name: split.name.clone(),
            train_trials: split.train_trials.clone(),
            test_trials: split.test_trials.clone(),
            vanilla: v,
            augmented: a,
            delta_f1,
            vanilla_predictions,
            augmented_predictions,
        });
    }
    Ok(ExperimentReport {
        seed: recipe.train.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{build_pair_dataset, generate_synthetic_corpus, SyntheticCorpusConfig};

    fn labels(pairs: &[(&str, Difficulty)]) -> BTreeMap<String, Difficulty> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn standard_cases_are_disjoint() {
        use Difficulty::{Easy, Hard};
        let d = labels(&[
            ("T1", Easy),
            ("T2", Hard),
            ("T3", Easy),
            ("T4", Hard),
            ("T5", Easy),
            ("T6", Hard),
        ]);
        let splits = standard_splits(&d);
        assert_eq!(splits.len(), 3);
        for s in &splits {
            s.validate().unwrap();
        }
        assert_eq!(
            splits[1].test_trials,
            ["T2", "T4", "T6"].map(String::from).into()
        );
        assert!(splits[2].test_trials.iter().all(|t| d[t] == Hard));
        assert_eq!(standard_splits(&labels(&[("T1", Easy)])).len(), 0);
    }

    #[test]
    fn overlap_rejected() {
        let s = SplitSpec {
            name: "bad".into(),
            train_trials: ["T1".to_string()].into(),
            test_trials: ["T1".to_string(), "T2".to_string()].into(),
            difficulty_labels: BTreeMap::new(),
        };
        assert!(matches!(
            s.validate(),
            Err(EvalError::OverlappingSplit { .. })
        ));
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let cfg = SyntheticCorpusConfig {
            n_patients: 20,
            n_trials: 4,
            n_criteria_total: 24,
            target_pairs: 640,
            seed: 4,
            ..Default::default()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let pairs = build_pair_dataset(&c.patients, &c.trials, &c.gold, 4).unwrap();
        let recipe = ModelRecipe {
            encoder: EncoderConfig {
                embedding_dim: 32,
                highway_channels: 8,
                ..Default::default()
            },
            train: TrainConfig {
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let encoder = recipe.encoder.build_encoder().unwrap();
        let splits = standard_splits(&c.difficulty);
        let view = CorpusView {
            trials: &c.trials,
            pairs: &pairs,
        };
        let run = || {
            run_generalizability(
                encoder.as_ref(),
                &c.patients,
                view,
                Some(view),
                &recipe,
                &splits,
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(!a.rows.is_empty());
        for r in &a.rows {
            assert!((0.0..=1.0).contains(&r.vanilla.f1));
            assert_eq!(r.delta_f1, Some(0.0));
            // no test-trial criterion leaks into training
            assert!(r.vanilla.n_train > 0 && r.vanilla.n_test > 0);
        }
    }
}
