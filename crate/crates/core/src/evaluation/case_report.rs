use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::{Criterion, CriterionKind, MatchLabel, PairExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CorrectedByAugmentation,
    RegressedByAugmentation,
    NoChange,
    ChangedStillWrong,
}

impl Verdict {
    pub fn of(vanilla: MatchLabel, augmented: MatchLabel, gold: MatchLabel) -> Self {
        if vanilla == augmented {
            Self::NoChange
        } else if augmented == gold {
            Self::CorrectedByAugmentation
        } else if vanilla == gold {
            Self::RegressedByAugmentation
        } else {
            Self::ChangedStillWrong
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CorrectedByAugmentation => "corrected by augmentation",
            Self::RegressedByAugmentation => "regressed by augmentation",
            Self::NoChange => "no change",
            Self::ChangedStillWrong => "changed, still wrong",
        })
    }
}

/// One case-study row: a criterion, its augmented variants, and the
/// predictions of both models against gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub patient_id: String,
    pub criterion_id: String,
    pub kind: CriterionKind,
    pub criterion: String,
    pub variants: Vec<String>,
    pub vanilla: MatchLabel,
    pub augmented: MatchLabel,
    pub gold: MatchLabel,
    pub verdict: Verdict,
}

pub fn emit_case_report(
    pair: &PairExample,
    criterion: &Criterion,
    variants: Option<&[String]>,
    vanilla: MatchLabel,
    augmented: MatchLabel,
    gold: MatchLabel,
) -> CaseReport {
    CaseReport {
        patient_id: pair.patient_id.clone(),
        criterion_id: criterion.criterion_id.clone(),
        kind: criterion.kind,
        criterion: criterion.text.clone(),
        variants: variants.map(<[String]>::to_vec).unwrap_or_default(),
        vanilla,
        augmented,
        gold,
        verdict: Verdict::of(vanilla, augmented, gold),
    }
}

impl CaseReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            CriterionKind::Inclusion => "inclusion",
            CriterionKind::Exclusion => "exclusion",
        };
        let _ = writeln!(s, "patient    {}", self.patient_id);
        let _ = writeln!(s, "criterion  {} ({kind})", self.criterion_id);
        let _ = writeln!(s, "  {}", self.criterion);
        let _ = writeln!(s, "variants");
        if self.variants.is_empty() {
            let _ = writeln!(s, "  (none)");
        }
        for (i, v) in self.variants.iter().enumerate() {
            let _ = writeln!(s, "  {}. {v}", i + 1);
        }
        let _ = writeln!(
            s,
            "{:<12}{:<12}{:<12}verdict",
            "vanilla", "augmented", "gold"
        );
        let _ = writeln!(
            s,
            "{:<12}{:<12}{:<12}{}",
            self.vanilla.as_str(),
            self.augmented.as_str(),
            self.gold.as_str(),
            self.verdict
        );
        s
    }
}
