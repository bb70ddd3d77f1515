//! Domain types shared by every stage, corpus validation, and the JSONL
//! storage format.
//!
//! A corpus directory holds three files:
//!
//! * `patients.jsonl`: one [`PatientRecord`] per line
//! * `trials.jsonl`: one [`Trial`] per line, criteria nested by kind
//! * `pairs.jsonl`: one [`PairExample`] per line
//!
//! Serialization is canonical: keys appear in declaration order and every
//! line ends in a single `\n`, so `save_corpus` followed by `load_corpus` is
//! the identity on validated corpora.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";

/// Strip surrounding whitespace and collapse internal runs to one space.
/// Case is preserved.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub diagnoses: Vec<String>,
    pub medications: Vec<String>,
    pub procedures: Vec<String>,
}

impl PatientRecord {
    /// Entries in memory-slot order: diagnoses, then medications, then procedures.
    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.diagnoses
            .iter()
            .chain(&self.medications)
            .chain(&self.procedures)
            .map(String::as_str)
    }

    pub fn n_entries(&self) -> usize {
        self.diagnoses.len() + self.medications.len() + self.procedures.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Inclusion,
    Exclusion,
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriterionKind::Inclusion => "inclusion",
            CriterionKind::Exclusion => "exclusion",
        })
    }
}

/// Which augmenter produced a criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMethod {
    Llm,
    SwapWord,
    ContextWord,
    BackTranslation,
}

impl AugmentationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationMethod::Llm => "llm",
            AugmentationMethod::SwapWord => "swap_word",
            AugmentationMethod::ContextWord => "context_word",
            AugmentationMethod::BackTranslation => "back_translation",
        }
    }
}

impl fmt::Display for AugmentationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented {
        source_criterion_id: String,
        method: AugmentationMethod,
    },
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Criterion {
    pub criterion_id: String,
    pub trial_id: String,
    pub kind: CriterionKind,
    pub text: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub trial_id: String,
    pub inclusion: Vec<Criterion>,
    pub exclusion: Vec<Criterion>,
}

impl Trial {
    pub fn new(trial_id: impl Into<String>) -> Self {
        Self {
            trial_id: trial_id.into(),
            inclusion: Vec::new(),
            exclusion: Vec::new(),
        }
    }

    /// All criteria, inclusion first, in stored order.
    pub fn criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.inclusion.iter().chain(&self.exclusion)
    }

    pub fn original_criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria().filter(|c| c.provenance.is_original())
    }

    pub fn push(&mut self, criterion: Criterion) {
        match criterion.kind {
            CriterionKind::Inclusion => self.inclusion.push(criterion),
            CriterionKind::Exclusion => self.exclusion.push(criterion),
        }
    }

    pub fn n_criteria(&self) -> usize {
        self.inclusion.len() + self.exclusion.len()
    }
}

/// Trial difficulty used for per-trial breakdowns and generalizability splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Criteria-level matching outcome. `Match` means the criterion's condition
/// holds for the patient, for inclusion and exclusion criteria alike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLabel {
    Match,
    Mismatch,
    Unknown,
}

impl MatchLabel {
    pub const ALL: [MatchLabel; 3] = [MatchLabel::Match, MatchLabel::Mismatch, MatchLabel::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            MatchLabel::Match => "match",
            MatchLabel::Mismatch => "mismatch",
            MatchLabel::Unknown => "unknown",
        }
    }

    /// Class index used by the classifier head and confusion matrices.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown label token `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for MatchLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "match" => Ok(MatchLabel::Match),
            "mismatch" => Ok(MatchLabel::Mismatch),
            "unknown" => Ok(MatchLabel::Unknown),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}

/// One labeled (patient, criterion) instance.
///
/// `origin_trial_id` names the trial whose (patient, trial) group generated
/// the pair. It differs from the criterion's own trial exactly for injected
/// `unknown` pairs; when absent it defaults to the criterion's trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairExample {
    pub patient_id: String,
    pub criterion_id: String,
    pub label: MatchLabel,
    pub split_tag: Option<String>,
    pub origin_trial_id: Option<String>,
}

impl PairExample {
    pub fn new(patient_id: &str, criterion_id: &str, label: MatchLabel) -> Self {
        Self {
            patient_id: patient_id.to_string(),
            criterion_id: criterion_id.to_string(),
            label,
            split_tag: None,
            origin_trial_id: None,
        }
    }

    pub fn with_origin(mut self, trial_id: &str) -> Self {
        self.origin_trial_id = Some(trial_id.to_string());
        self
    }

    /// Trial of the generating group, resolved against the criterion index.
    pub fn group_trial<'a>(&'a self, criterion: &'a Criterion) -> &'a str {
        self.origin_trial_id
            .as_deref()
            .unwrap_or(&criterion.trial_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub patients: Vec<PatientRecord>,
    pub trials: Vec<Trial>,
    pub pairs: Vec<PairExample>,
}

impl Corpus {
    pub fn criterion_index(&self) -> HashMap<&str, &Criterion> {
        criterion_index(&self.trials)
    }

    pub fn patient_index(&self) -> HashMap<&str, &PatientRecord> {
        self.patients
            .iter()
            .map(|p| (p.patient_id.as_str(), p))
            .collect()
    }
}

pub fn criterion_index(trials: &[Trial]) -> HashMap<&str, &Criterion> {
    trials
        .iter()
        .flat_map(Trial::criteria)
        .map(|c| (c.criterion_id.as_str(), c))
        .collect()
}

// ----------------------------------------------------------------------------
// Validation
// ----------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub rule: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, rule: &str) -> usize {
        self.violations.iter().filter(|v| v.rule == rule).count()
    }

    fn push(&mut self, entity: impl Into<String>, rule: &'static str) {
        self.violations.push(Violation {
            entity: entity.into(),
            rule,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}", v.entity, v.rule)?;
        }
        Ok(())
    }
}

/// Check every corpus invariant. Violations are returned as data.
pub fn validate_corpus(
    patients: &[PatientRecord],
    trials: &[Trial],
    pairs: &[PairExample],
) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut patient_ids = HashSet::new();
    for p in patients {
        if p.patient_id.trim().is_empty() {
            report.push("<patient>", "empty patient id");
        } else if !patient_ids.insert(p.patient_id.as_str()) {
            report.push(&p.patient_id, "duplicate patient id");
        }
        if p.entries().any(|e| e.trim().is_empty()) {
            report.push(&p.patient_id, "empty entry");
        }
    }

    let mut trial_ids = HashSet::new();
    let mut criteria: HashMap<&str, &Criterion> = HashMap::new();
    for t in trials {
        if !trial_ids.insert(t.trial_id.as_str()) {
            report.push(&t.trial_id, "duplicate trial id");
        }
        if t.n_criteria() == 0 {
            report.push(&t.trial_id, "trial without criteria");
        }
        for (list, kind) in [
            (&t.inclusion, CriterionKind::Inclusion),
            (&t.exclusion, CriterionKind::Exclusion),
        ] {
            for c in list {
                if c.kind != kind {
                    report.push(&c.criterion_id, "criterion kind mismatch");
                }
                if c.trial_id != t.trial_id {
                    report.push(&c.criterion_id, "criterion trial mismatch");
                }
                if normalize_text(&c.text).is_empty() {
                    report.push(&c.criterion_id, "empty criterion text");
                }
                if criteria.insert(c.criterion_id.as_str(), c).is_some() {
                    report.push(&c.criterion_id, "duplicate criterion id");
                }
            }
        }
    }

    for c in criteria.values() {
        if let Provenance::Augmented {
            source_criterion_id,
            ..
        } = &c.provenance
        {
            match criteria.get(source_criterion_id.as_str()) {
                Some(src) if src.provenance.is_original() => {
                    if src.kind != c.kind {
                        report.push(&c.criterion_id, "augmented kind mismatch");
                    }
                }
                _ => report.push(&c.criterion_id, "augmented source missing"),
            }
        }
    }
    // HashMap iteration order is arbitrary; keep reports deterministic.
    report
        .violations
        .sort_by(|a, b| (a.rule, &a.entity).cmp(&(b.rule, &b.entity)));

    let mut seen_pairs = HashSet::new();
    for pair in pairs {
        let key = format!("{}/{}", pair.patient_id, pair.criterion_id);
        if !patient_ids.contains(pair.patient_id.as_str()) {
            report.push(&key, "dangling patient reference");
        }
        let Some(criterion) = criteria.get(pair.criterion_id.as_str()) else {
            report.push(&key, "dangling criterion reference");
            continue;
        };
        let group = pair.group_trial(criterion);
        if !trial_ids.contains(group) {
            report.push(&key, "dangling origin trial");
        }
        if !seen_pairs.insert((
            pair.patient_id.as_str(),
            pair.criterion_id.as_str(),
            group.to_string(),
        )) {
            report.push(&key, "duplicate pair");
        }
        let cross_trial = group != criterion.trial_id;
        match (pair.label, cross_trial) {
            (MatchLabel::Unknown, false) => report.push(&key, "unknown label within trial"),
            (MatchLabel::Match | MatchLabel::Mismatch, true) => {
                report.push(&key, "labeled cross-trial pair")
            }
            _ => {}
        }
    }

    report
}

// ----------------------------------------------------------------------------
// JSONL storage
// ----------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record at field `{field}`: {detail}")]
    Malformed {
        path: PathBuf,
        line: usize,
        field: String,
        detail: String,
    },
    #[error("{path}: unknown label token `{token}` at line {line}")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        token: String,
    },
}

#[derive(Serialize, Deserialize)]
struct CriterionRow {
    criterion_id: String,
    text: String,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TrialRow {
    trial_id: String,
    inclusion: Vec<CriterionRow>,
    exclusion: Vec<CriterionRow>,
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    patient_id: String,
    criterion_id: String,
    label: String,
    split_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin_trial_id: Option<String>,
}

impl From<&Trial> for TrialRow {
    fn from(t: &Trial) -> Self {
        let rows = |list: &[Criterion]| {
            list.iter()
                .map(|c| CriterionRow {
                    criterion_id: c.criterion_id.clone(),
                    text: c.text.clone(),
                    provenance: c.provenance.clone(),
                })
                .collect()
        };
        TrialRow {
            trial_id: t.trial_id.clone(),
            inclusion: rows(&t.inclusion),
            exclusion: rows(&t.exclusion),
        }
    }
}

impl From<TrialRow> for Trial {
    fn from(row: TrialRow) -> Self {
        let trial_id = row.trial_id;
        let build = |rows: Vec<CriterionRow>, kind| {
            rows.into_iter()
                .map(|r| Criterion {
                    criterion_id: r.criterion_id,
                    trial_id: trial_id.clone(),
                    kind,
                    text: r.text,
                    provenance: r.provenance,
                })
                .collect()
        };
        let inclusion = build(row.inclusion, CriterionKind::Inclusion);
        let exclusion = build(row.exclusion, CriterionKind::Exclusion);
        Trial {
            trial_id,
            inclusion,
            exclusion,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a JSONL file, one `T` per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let value = serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            field: e.path().to_string(),
            detail: e.inner().to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Write records one per line in canonical key order.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("corpus records always serialize");
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_patients(path: &Path) -> Result<Vec<PatientRecord>, CorpusError> {
    read_jsonl(path)
}

pub fn load_trials(path: &Path) -> Result<Vec<Trial>, CorpusError> {
    Ok(read_jsonl::<TrialRow>(path)?
        .into_iter()
        .map(Trial::from)
        .collect())
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>, CorpusError> {
    let rows: Vec<(usize, PairRow)> = {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let de = &mut serde_json::Deserializer::from_str(&line);
            let row: PairRow =
                serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    field: e.path().to_string(),
                    detail: e.inner().to_string(),
                })?;
            rows.push((i + 1, row));
        }
        rows
    };
    rows.into_iter()
        .map(|(line, row)| {
            let label =
                row.label
                    .parse()
                    .map_err(|UnknownLabel(token)| CorpusError::UnknownLabel {
                        path: path.to_path_buf(),
                        line,
                        token,
                    })?;
            Ok(PairExample {
                patient_id: row.patient_id,
                criterion_id: row.criterion_id,
                label,
                split_tag: row.split_tag,
                origin_trial_id: row.origin_trial_id,
            })
        })
        .collect()
}

pub fn save_patients(path: &Path, patients: &[PatientRecord]) -> Result<(), CorpusError> {
    write_jsonl(path, patients)
}

pub fn save_trials(path: &Path, trials: &[Trial]) -> Result<(), CorpusError> {
    let rows: Vec<TrialRow> = trials.iter().map(TrialRow::from).collect();
    write_jsonl(path, &rows)
}

pub fn save_pairs(path: &Path, pairs: &[PairExample]) -> Result<(), CorpusError> {
    let rows: Vec<PairRow> = pairs
        .iter()
        .map(|p| PairRow {
            patient_id: p.patient_id.clone(),
            criterion_id: p.criterion_id.clone(),
            label: p.label.as_str().to_string(),
            split_tag: p.split_tag.clone(),
            origin_trial_id: p.origin_trial_id.clone(),
        })
        .collect();
    write_jsonl(path, &rows)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    Ok(Corpus {
        patients: load_patients(&dir.join(PATIENTS_FILE))?,
        trials: load_trials(&dir.join(TRIALS_FILE))?,
        pairs: load_pairs(&dir.join(PAIRS_FILE))?,
    })
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_patients(&dir.join(PATIENTS_FILE), &corpus.patients)?;
    save_trials(&dir.join(TRIALS_FILE), &corpus.trials)?;
    save_pairs(&dir.join(PAIRS_FILE), &corpus.pairs)
}

/// Pairs grouped by (patient, generating trial), ordered by key; pairs keep
/// their input order within a group.
pub fn group_pairs<'a>(
    pairs: &'a [PairExample],
    criteria: &HashMap<&str, &'a Criterion>,
) -> BTreeMap<(String, String), Vec<&'a PairExample>> {
    let mut groups: BTreeMap<(String, String), Vec<&PairExample>> = BTreeMap::new();
    for p in pairs {
        if let Some(c) = criteria.get(p.criterion_id.as_str()) {
            groups
                .entry((p.patient_id.clone(), p.group_trial(c).to_string()))
                .or_default()
                .push(p);
        }
    }
    groups
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn normalization_collapses_whitespace_and_keeps_case() {
        assert_eq!(
            normalize_text("  Acute   ischemic\tStroke \n"),
            "Acute ischemic Stroke"
        );
        assert_eq!(normalize_text("   "), "");
    }

    #[test]
    fn well_formed_fixture_validates() {
        let c = small_corpus();
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn dangling_criterion_is_reported() {
        let mut c = small_corpus();
        c.pairs
            .push(PairExample::new("P0001", "C9999", MatchLabel::Match));
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, "dangling criterion reference");
    }

    #[test]
    fn duplicate_pair_is_reported() {
        let mut c = small_corpus();
        c.pairs
            .push(PairExample::new("P0001", "C0001", MatchLabel::Mismatch));
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, "duplicate pair");
    }

    #[test]
    fn same_criterion_under_another_group_is_not_a_duplicate() {
        let mut c = small_corpus();
        let mut other = Trial::new("NCT03735979");
        other.push(criterion(
            "C0003",
            "NCT03735979",
            CriterionKind::Inclusion,
            "Age 18 or older.",
        ));
        c.trials.push(other);
        c.pairs
            .push(PairExample::new("P0001", "C0003", MatchLabel::Match));
        c.pairs.push(
            PairExample::new("P0001", "C0003", MatchLabel::Unknown).with_origin("NCT03263117"),
        );
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn unknown_label_rules() {
        let mut c = small_corpus();
        c.pairs[0].label = MatchLabel::Unknown;
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert_eq!(report.count("unknown label within trial"), 1);
    }

    #[test]
    fn augmented_criteria_need_an_original_source_of_the_same_kind() {
        let mut c = small_corpus();
        c.trials[0].push(Criterion {
            criterion_id: "C0001-llm-1".into(),
            trial_id: "NCT03263117".into(),
            kind: CriterionKind::Exclusion,
            text: "Patients with an acute ischemic stroke.".into(),
            provenance: Provenance::Augmented {
                source_criterion_id: "C0001".into(),
                method: AugmentationMethod::Llm,
            },
        });
        let report = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert_eq!(report.count("augmented kind mismatch"), 1);
    }

    #[test]
    fn validation_is_pure() {
        let mut c = small_corpus();
        c.pairs
            .push(PairExample::new("P0003", "C0001", MatchLabel::Match));
        let before = c.clone();
        let a = validate_corpus(&c.patients, &c.trials, &c.pairs);
        let b = validate_corpus(&c.patients, &c.trials, &c.pairs);
        assert_eq!(a, b);
        assert_eq!(c, before);
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_corpus();
        c.pairs[1].split_tag = Some("test".into());
        save_corpus(dir.path(), &c).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, c);
        let first = fs::read_to_string(dir.path().join(PAIRS_FILE)).unwrap();
        assert!(first.starts_with(
            r#"{"patient_id":"P0001","criterion_id":"C0001","label":"match","split_tag":null}"#
        ));
    }

    #[test]
    fn wrong_case_label_names_token_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PAIRS_FILE);
        fs::write(
            &path,
            "{\"patient_id\":\"P1\",\"criterion_id\":\"C1\",\"label\":\"match\",\"split_tag\":null}\n\
             {\"patient_id\":\"P1\",\"criterion_id\":\"C2\",\"label\":\"Match\",\"split_tag\":null}\n",
        )
        .unwrap();
        let err = load_pairs(&path).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("unknown label token `Match` at line 2"),
            "{msg}"
        );
    }

    #[test]
    fn malformed_line_names_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PATIENTS_FILE);
        fs::write(
            &path,
            "{\"patient_id\":\"P1\",\"diagnoses\":[3],\"medications\":[],\"procedures\":[]}\n",
        )
        .unwrap();
        match load_patients(&path).unwrap_err() {
            CorpusError::Malformed { line, field, .. } => {
                assert_eq!(line, 1);
                assert!(field.starts_with("diagnoses"), "{field}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_files_give_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        for f in [PATIENTS_FILE, TRIALS_FILE, PAIRS_FILE] {
            fs::write(dir.path().join(f), "").unwrap();
        }
        assert_eq!(load_corpus(dir.path()).unwrap(), Corpus::default());
    }
}
