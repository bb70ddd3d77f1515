//! Outbound-prompt screening against the private patient corpus.
//!
//! The vocabulary holds every patient entry, lowercased and whitespace
//! normalized. A prompt is blocked when it contains any vocabulary phrase as a
//! substring or matches a blocklist pattern.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use aho_corasick::{AhoCorasick, MatchKind};
use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, PatientRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Enforce,
    AuditOnly,
}

impl std::str::FromStr for PolicyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enforce" => Ok(PolicyMode::Enforce),
            "audit_only" | "audit-only" => Ok(PolicyMode::AuditOnly),
            other => Err(format!(
                "unknown policy mode `{other}` (expected enforce or audit_only)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockPattern {
    pub name: String,
    pub regex: Regex,
}

impl BlockPattern {
    pub fn new(name: &str, pattern: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            name: name.to_string(),
            regex: Regex::new(pattern)?,
        })
    }
}

/// Patterns applied to the lowercased prompt.
pub fn default_blocklist() -> Vec<BlockPattern> {
    [
        ("patient-id", r"\bp\d{4,}\b"),
        (
            "date",
            r"\b\d{4}-\d{1,2}-\d{1,2}\b|\b\d{1,2}/\d{1,2}/\d{2,4}\b",
        ),
        ("mrn", r"\bmrn\W{0,3}\d+|\b\d{8,10}\b"),
        ("ssn", r"\b\d{3}-\d{2}-\d{4}\b"),
        ("phone", r"\(?\b\d{3}\)?[-. ]\d{3}[-. ]\d{4}\b"),
    ]
    .into_iter()
    .map(|(n, p)| BlockPattern::new(n, p).expect("static pattern"))
    .collect()
}

fn normalize_for_screen(text: &str) -> String {
    normalize_text(text).to_lowercase()
}

pub struct PrivacyPolicy {
    pub patient_vocabulary: BTreeSet<String>,
    pub pattern_blocklist: Vec<BlockPattern>,
    pub mode: PolicyMode,
    matcher: AhoCorasick,
    phrases: Vec<String>,
}

impl PrivacyPolicy {
    pub fn new(
        patient_vocabulary: BTreeSet<String>,
        pattern_blocklist: Vec<BlockPattern>,
        mode: PolicyMode,
    ) -> Self {
        let phrases: Vec<String> = patient_vocabulary.iter().cloned().collect();
        let matcher = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(&phrases)
            .expect("vocabulary automaton");
        Self {
            patient_vocabulary,
            pattern_blocklist,
            mode,
            matcher,
            phrases,
        }
    }

    pub fn from_patients(patients: &[PatientRecord], mode: PolicyMode) -> Self {
        Self::new(vocabulary_of(patients), default_blocklist(), mode)
    }
}

pub fn vocabulary_of(patients: &[PatientRecord]) -> BTreeSet<String> {
    patients
        .iter()
        .flat_map(PatientRecord::entries)
        .map(normalize_for_screen)
        .filter(|e| !e.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScreenOutcome {
    Pass,
    Violation(Vec<String>),
}

impl ScreenOutcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, ScreenOutcome::Pass)
    }
}

/// Vocabulary hits are reported as the phrase itself, pattern hits as
/// `pattern: <name>`.
pub fn screen_prompt(prompt: &str, policy: &PrivacyPolicy) -> ScreenOutcome {
    let text = normalize_for_screen(prompt);
    let mut hits: BTreeSet<String> = policy
        .matcher
        .find_overlapping_iter(&text)
        .map(|m| policy.phrases[m.pattern().as_usize()].clone())
        .collect();
    for p in &policy.pattern_blocklist {
        if p.regex.is_match(&text) {
            hits.insert(format!("pattern: {}", p.name));
        }
    }
    if hits.is_empty() {
        ScreenOutcome::Pass
    } else {
        ScreenOutcome::Violation(hits.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Screened clean; request sent.
    Pass,
    /// Violation in enforce mode; request not sent.
    Blocked,
    /// Violation in audit-only mode; request sent.
    Flagged,
    /// Augmenter ran in-process; nothing left the process.
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyAuditEntry {
    pub timestamp: DateTime<Utc>,
    pub criterion_id: String,
    pub decision: Decision,
    pub matches: Vec<String>,
    /// Outbound text, present whenever the request was sent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl PrivacyAuditEntry {
    pub fn sent(&self) -> bool {
        matches!(self.decision, Decision::Pass | Decision::Flagged)
    }
}

/// Screen, then decide whether the request may go out under `policy.mode`.
pub fn adjudicate(
    criterion_id: &str,
    prompt: &str,
    policy: &PrivacyPolicy,
    timestamp: DateTime<Utc>,
) -> PrivacyAuditEntry {
    let (decision, matches) = match screen_prompt(prompt, policy) {
        ScreenOutcome::Pass => (Decision::Pass, Vec::new()),
        ScreenOutcome::Violation(m) => match policy.mode {
            PolicyMode::Enforce => (Decision::Blocked, m),
            PolicyMode::AuditOnly => (Decision::Flagged, m),
        },
    };
    let sent = matches!(decision, Decision::Pass | Decision::Flagged);
    PrivacyAuditEntry {
        timestamp,
        criterion_id: criterion_id.to_string(),
        decision,
        matches,
        prompt: sent.then(|| prompt.to_string()),
    }
}

/// Single appender for audit entries. Entries are kept in memory and, when a
/// path is given, written as JSONL.
pub struct AuditLog {
    inner: Mutex<AuditInner>,
    clock: Option<DateTime<Utc>>,
}

struct AuditInner {
    entries: Vec<PrivacyAuditEntry>,
    sink: Option<BufWriter<File>>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(AuditInner {
                entries: Vec::new(),
                sink: None,
            }),
            clock: None,
        }
    }

    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let log = Self::in_memory();
        log.inner.lock().expect("audit lock").sink = Some(BufWriter::new(file));
        Ok(log)
    }

    /// Pin every timestamp (for reproducible logs).
    pub fn with_fixed_clock(mut self, at: DateTime<Utc>) -> Self {
        self.clock = Some(at);
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.unwrap_or_else(Utc::now)
    }

    pub fn append(&self, entry: &PrivacyAuditEntry) -> std::io::Result<()> {
        let mut inner = self.inner.lock().expect("audit lock");
        if let Some(sink) = inner.sink.as_mut() {
            serde_json::to_writer(&mut *sink, entry)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        inner.entries.push(entry.clone());
        Ok(())
    }

    pub fn entries(&self) -> Vec<PrivacyAuditEntry> {
        self.inner.lock().expect("audit lock").entries.clone()
    }
}

pub fn read_audit_log(path: &Path) -> Result<Vec<PrivacyAuditEntry>, crate::data::CorpusError> {
    crate::data::read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patients() -> Vec<PatientRecord> {
        vec![PatientRecord {
            patient_id: "P0042".into(),
            diagnoses: vec!["Epilepsy [G40.909]".into()],
            medications: vec!["warfarin 5 mg tablet [W01]".into()],
            procedures: vec![],
        }]
    }

    #[test]
    fn disjoint_criterion_text_passes() {
        let policy = PrivacyPolicy::from_patients(&patients(), PolicyMode::Enforce);
        let out = screen_prompt("Paraphrase: Acute ischemic stroke patients.", &policy);
        assert_eq!(out, ScreenOutcome::Pass);
    }

    #[test]
    fn vocabulary_phrase_is_reported() {
        let policy = PrivacyPolicy::from_patients(&patients(), PolicyMode::Enforce);
        let out = screen_prompt("History of  EPILEPSY [g40.909] in adults", &policy);
        assert_eq!(
            out,
            ScreenOutcome::Violation(vec!["epilepsy [g40.909]".into()])
        );
    }

    #[test]
    fn patient_id_pattern_is_reported() {
        let policy = PrivacyPolicy::from_patients(&[], PolicyMode::Enforce);
        let out = screen_prompt("Summarize the record of P0042.", &policy);
        assert_eq!(
            out,
            ScreenOutcome::Violation(vec!["pattern: patient-id".into()])
        );
    }

    #[test]
    fn blocklist_patterns() {
        let policy = PrivacyPolicy::from_patients(&[], PolicyMode::Enforce);
        for (text, name) in [
            ("seen on 2021-03-04", "date"),
            ("seen on 3/4/21", "date"),
            ("MRN: 55512", "mrn"),
            ("ssn 123-45-6789", "ssn"),
            ("call (555) 123-4567", "phone"),
        ] {
            let out = screen_prompt(text, &policy);
            let ScreenOutcome::Violation(m) = out else {
                panic!("{text} passed")
            };
            assert!(m.contains(&format!("pattern: {name}")), "{text}: {m:?}");
        }
        assert!(screen_prompt("Age 18 years or older, score >= 4.", &policy).is_pass());
    }

    #[test]
    fn audit_only_flags_but_sends() {
        let policy = PrivacyPolicy::from_patients(&patients(), PolicyMode::AuditOnly);
        let e = adjudicate("C1", "P0042", &policy, DateTime::UNIX_EPOCH);
        assert_eq!(e.decision, Decision::Flagged);
        assert!(e.sent());
        let policy = PrivacyPolicy::from_patients(&patients(), PolicyMode::Enforce);
        let e = adjudicate("C1", "P0042", &policy, DateTime::UNIX_EPOCH);
        assert_eq!(e.decision, Decision::Blocked);
        assert_eq!(e.prompt, None);
    }

    #[test]
    fn audit_log_writes_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.log");
        let log = AuditLog::to_file(&path)
            .unwrap()
            .with_fixed_clock(DateTime::UNIX_EPOCH);
        let policy = PrivacyPolicy::from_patients(&patients(), PolicyMode::Enforce);
        log.append(&adjudicate("C1", "clean text", &policy, log.now()))
            .unwrap();
        log.append(&adjudicate("C2", "P0042", &policy, log.now()))
            .unwrap();
        let back = read_audit_log(&path).unwrap();
        assert_eq!(back, log.entries());
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(
            r#"{"timestamp":"1970-01-01T00:00:00Z","criterion_id":"C1","decision":"pass","matches":[]"#
        ));
    }
}
