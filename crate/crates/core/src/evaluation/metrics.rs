use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::{MatchLabel, PairExample};

/// 3x3 counts indexed `[gold][pred]` in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_labels<I: IntoIterator<Item = (MatchLabel, MatchLabel)>>(pairs: I) -> Self {
        let mut m = Self::default();
        for (gold, pred) in pairs {
            m.add(gold, pred);
        }
        m
    }

    pub fn add(&mut self, gold: MatchLabel, pred: MatchLabel) {
        self.counts[gold.index()][pred.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gold_count(&self, class: MatchLabel) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn pred_count(&self, class: MatchLabel) -> u64 {
        self.counts.iter().map(|row| row[class.index()]).sum()
    }

    pub fn true_positives(&self, class: MatchLabel) -> u64 {
        self.counts[class.index()][class.index()]
    }

    /// One-vs-rest (precision, recall) for `class`; 0 where undefined.
    pub fn one_vs_rest(&self, class: MatchLabel) -> (f64, f64) {
        let tp = self.true_positives(class) as f64;
        (
            ratio(tp, self.pred_count(class)),
            ratio(tp, self.gold_count(class)),
        )
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.iter().map(|r| r.to_vec()).collect()
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Criteria,
    Trial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    MatchPositive,
    Macro,
}

/// One row of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: Level,
    pub averaging: Averaging,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: u64,
    /// `[gold][pred]`; 3x3 at criteria level, 2x2 (match, mismatch) at trial level.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    /// Match as the positive class within the full confusion matrix.
    pub fn match_positive(level: Level, cm: &ConfusionMatrix) -> Self {
        let (precision, recall) = cm.one_vs_rest(MatchLabel::Match);
        Self {
            level,
            averaging: Averaging::MatchPositive,
            precision,
            recall,
            f1: f1_score(precision, recall),
            n: cm.total(),
            confusion: confusion_rows(level, cm),
        }
    }

    /// One-vs-rest precision and recall averaged over the classes that occur
    /// in gold or predictions; F1 is taken from the averaged P and R.
    pub fn macro_averaged(level: Level, cm: &ConfusionMatrix) -> Self {
        let present: Vec<MatchLabel> = MatchLabel::ALL
            .into_iter()
            .filter(|c| cm.gold_count(*c) + cm.pred_count(*c) > 0)
            .collect();
        let (mut p, mut r) = (0.0, 0.0);
        for c in &present {
            let (cp, cr) = cm.one_vs_rest(*c);
            p += cp;
            r += cr;
        }
        if !present.is_empty() {
            p /= present.len() as f64;
            r /= present.len() as f64;
        }
        Self {
            level,
            averaging: Averaging::Macro,
            precision: p,
            recall: r,
            f1: f1_score(p, r),
            n: cm.total(),
            confusion: confusion_rows(level, cm),
        }
    }
}

fn confusion_rows(level: Level, cm: &ConfusionMatrix) -> Vec<Vec<u64>> {
    match level {
        Level::Criteria => cm.rows(),
        Level::Trial => cm.counts[..2].iter().map(|r| r[..2].to_vec()).collect(),
    }
}

/// Identity of a scored pair: patient, criterion and generating trial.
pub type PairKey = (String, String, Option<String>);

pub fn pair_key(p: &PairExample) -> PairKey {
    (
        p.patient_id.clone(),
        p.criterion_id.clone(),
        p.origin_trial_id.clone(),
    )
}

/// Gold and predicted labels aligned by pair key, in gold order.
pub fn align(
    predictions: &[PairExample],
    gold: &[PairExample],
) -> Result<Vec<(MatchLabel, MatchLabel)>, EvalError> {
    if gold.is_empty() || predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let pred: BTreeMap<PairKey, MatchLabel> =
        predictions.iter().map(|p| (pair_key(p), p.label)).collect();
    let gold_keys: BTreeSet<PairKey> = gold.iter().map(pair_key).collect();
    let mut missing: Vec<String> = gold_keys
        .iter()
        .filter(|k| !pred.contains_key(*k))
        .map(|k| format!("prediction for {}", show_key(k)))
        .collect();
    missing.extend(
        pred.keys()
            .filter(|k| !gold_keys.contains(*k))
            .map(|k| format!("gold for {}", show_key(k))),
    );
    if !missing.is_empty() {
        return Err(EvalError::Misaligned(missing));
    }
    Ok(gold.iter().map(|g| (g.label, pred[&pair_key(g)])).collect())
}

fn show_key(k: &PairKey) -> String {
    match &k.2 {
        Some(t) => format!("{}/{} (group {t})", k.0, k.1),
        None => format!("{}/{}", k.0, k.1),
    }
}

/// Criteria-level reports in both averaging modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaMetrics {
    pub match_positive: MetricReport,
    pub macro_averaged: MetricReport,
    pub confusion: ConfusionMatrix,
}

pub fn criteria_level_metrics(
    predictions: &[PairExample],
    gold: &[PairExample],
) -> Result<CriteriaMetrics, EvalError> {
    let cm = ConfusionMatrix::from_labels(align(predictions, gold)?);
    Ok(CriteriaMetrics {
        match_positive: MetricReport::match_positive(Level::Criteria, &cm),
        macro_averaged: MetricReport::macro_averaged(Level::Criteria, &cm),
        confusion: cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use MatchLabel::{Match as M, Mismatch as X, Unknown as U};

    fn pairs(labels: &[MatchLabel]) -> Vec<PairExample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| PairExample::new("P1", &format!("C{i}"), *l))
            .collect()
    }

    #[test]
    fn hand_confusion_example() {
        let m = criteria_level_metrics(&pairs(&[M, M, X, U]), &pairs(&[M, X, X, U])).unwrap();
        let r = &m.match_positive;
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.n, 4);
        assert_eq!(m.confusion.counts, [[1, 0, 0], [1, 1, 0], [0, 0, 1]]);
        // macro: match (0.5, 1), mismatch (1, 0.5), unknown (1, 1)
        assert!((m.macro_averaged.precision - 2.5 / 3.0).abs() < 1e-12);
        assert!((m.macro_averaged.recall - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let gold = pairs(&[M, X, U, M]);
        let m = criteria_level_metrics(&gold, &gold).unwrap();
        for r in [&m.match_positive, &m.macro_averaged] {
            assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn empty_and_misaligned_are_errors() {
        assert!(matches!(
            criteria_level_metrics(&[], &pairs(&[M])),
            Err(EvalError::Empty)
        ));
        let mut pred = pairs(&[M, M]);
        pred[1].criterion_id = "C9".into();
        match criteria_level_metrics(&pred, &pairs(&[M, M])) {
            Err(EvalError::Misaligned(keys)) => {
                assert_eq!(keys, ["prediction for P1/C1", "gold for P1/C9"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_json_shape() {
        let cm = ConfusionMatrix::from_labels([(M, M), (X, M)]);
        let json = serde_json::to_string(&MetricReport::match_positive(Level::Trial, &cm)).unwrap();
        assert_eq!(
            json,
            r#"{"level":"trial","averaging":"match_positive","precision":0.5,"recall":1.0,"f1":0.6666666666666666,"n":2,"confusion":[[1,0],[1,0]]}"#
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels() -> impl Strategy<Value = Vec<(usize, usize)>> {
            prop::collection::vec((0usize..3, 0usize..3), 1..40)
        }

        proptest! {
            #[test]
            fn identities_hold(v in labels()) {
                let lab = |i| MatchLabel::from_index(i).unwrap();
                let cm = ConfusionMatrix::from_labels(v.iter().map(|(g, p)| (lab(*g), lab(*p))));
                for c in MatchLabel::ALL {
                    let gold = v.iter().filter(|(g, _)| lab(*g) == c).count() as u64;
                    prop_assert_eq!(cm.gold_count(c), gold);
                }
                prop_assert_eq!(cm.total(), v.len() as u64);
                for r in [MetricReport::match_positive(Level::Criteria, &cm), MetricReport::macro_averaged(Level::Criteria, &cm)] {
                    prop_assert!((0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
                    if r.precision + r.recall > 0.0 {
                        prop_assert!((r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)).abs() < 1e-12);
                    } else {
                        prop_assert_eq!(r.f1, 0.0);
                    }
                }
            }

            #[test]
            fn order_invariant(v in labels(), rot in 0usize..40) {
                let lab = |i| MatchLabel::from_index(i).unwrap();
                let gold: Vec<PairExample> = v.iter().enumerate().map(|(i, (g, _))| PairExample::new("P", &format!("C{i}"), lab(*g))).collect();
                let pred: Vec<PairExample> = v.iter().enumerate().map(|(i, (_, p))| PairExample::new("P", &format!("C{i}"), lab(*p))).collect();
                let mut rotated = pred.clone();
                rotated.rotate_left(rot % pred.len());
                let a = criteria_level_metrics(&pred, &gold).unwrap();
                let b = criteria_level_metrics(&rotated, &gold).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
