//! Prompting, filtering, set assembly and label propagation.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use super::baselines::{
    back_translate, context_word_augment, swap_word_augment, MaskFiller, Pivot, Translator,
};
use super::llm::{LlmClient, LlmError, LlmRequest};
use super::privacy::{adjudicate, AuditLog, Decision, PrivacyAuditEntry, PrivacyPolicy};
use crate::data::{
    normalize_text, AugmentationMethod, Criterion, CriterionKind, PairExample, Provenance, Trial,
};
use crate::seed::stable_hash;

pub const DEFAULT_PREFIX: &str =
    "Paraphrase the following clinical trial eligibility criterion. Keep its inclusion or exclusion meaning unchanged:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub prefix_text: String,
    pub k_variants: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            template_id: "paraphrase-v1".into(),
            prefix_text: DEFAULT_PREFIX.into(),
            k_variants: 3,
        }
    }
}

pub fn build_prompt(template: &PromptTemplate, criterion: &Criterion) -> String {
    if template.prefix_text.is_empty() {
        criterion.text.clone()
    } else {
        format!("{} {}", template.prefix_text, criterion.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub source_criterion_id: String,
    pub method_tag: AugmentationMethod,
    pub outputs: Vec<String>,
    pub prompt_used: String,
    pub audit: PrivacyAuditEntry,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("{criterion_id}: prompt blocked by privacy policy ({})", matches.join(", "))]
    Blocked {
        criterion_id: String,
        matches: Vec<String>,
    },
    #[error("{criterion_id}: no usable variants")]
    NoUsableVariants { criterion_id: String },
    #[error("{criterion_id}: {source} (after {retries} retries)")]
    Client {
        criterion_id: String,
        retries: u32,
        source: LlmError,
    },
    #[error("{criterion_id}: {detail}")]
    Baseline {
        criterion_id: String,
        detail: String,
    },
    #[error("criterion {criterion_id} does not belong to trial {trial_id}")]
    ForeignSource {
        criterion_id: String,
        trial_id: String,
    },
    #[error("augmented criterion {augmented_id} has source {source_id} with no labeled pair")]
    UnlabeledSource {
        augmented_id: String,
        source_id: String,
    },
    #[error("audit log write failed: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmOptions {
    pub max_retries: u32,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for LlmOptions {
    fn default() -> Self {
        Self {
            max_retries: 2,
            temperature: 0.7,
            max_tokens: 128,
        }
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Drop empty, duplicate and source-equal outputs; with `length_rules`, also
/// drop outputs over 3x the source length or under 3 words.
pub fn filter_outputs(source: &str, outputs: Vec<String>, length_rules: bool) -> Vec<String> {
    let src = normalize_text(source).to_lowercase();
    let max_len = 3 * source.chars().count();
    let mut seen = HashSet::new();
    outputs
        .into_iter()
        .map(|o| normalize_text(&o))
        .filter(|o| !o.is_empty())
        .filter(|o| o.to_lowercase() != src)
        .filter(|o| !length_rules || (o.chars().count() <= max_len && word_count(o) >= 3))
        .filter(|o| seen.insert(o.to_lowercase()))
        .collect()
}

/// Screen and audit the prompt before any request.
fn gate(
    criterion: &Criterion,
    prompt: &str,
    policy: &PrivacyPolicy,
    log: &AuditLog,
) -> PrivacyAuditEntry {
    let entry = adjudicate(&criterion.criterion_id, prompt, policy, log.now());
    if entry.decision == Decision::Flagged {
        warn!(criterion = %criterion.criterion_id, matches = ?entry.matches, "privacy violation (audit only)");
    }
    entry
}

fn llm_variants(
    criterion: &Criterion,
    template: &PromptTemplate,
    client: &dyn LlmClient,
    options: &LlmOptions,
    entry: PrivacyAuditEntry,
) -> Result<AugmentationRecord, AugmentError> {
    let prompt = build_prompt(template, criterion);
    if entry.decision == Decision::Blocked {
        return Err(AugmentError::Blocked {
            criterion_id: criterion.criterion_id.clone(),
            matches: entry.matches,
        });
    }
    let request = LlmRequest {
        prompt: prompt.clone(),
        n: template.k_variants,
        temperature: options.temperature,
        max_tokens: options.max_tokens,
    };
    let mut attempt = 0;
    let raw = loop {
        match client.complete(&request) {
            Ok(r) => break r,
            Err(e @ LlmError::Transport(_)) if attempt < options.max_retries => {
                debug!(criterion = %criterion.criterion_id, attempt, error = %e, "retrying");
                attempt += 1;
            }
            Err(e) => {
                return Err(AugmentError::Client {
                    criterion_id: criterion.criterion_id.clone(),
                    retries: attempt,
                    source: e,
                })
            }
        }
    };
    let outputs = filter_outputs(&criterion.text, raw, true);
    if outputs.is_empty() {
        return Err(AugmentError::NoUsableVariants {
            criterion_id: criterion.criterion_id.clone(),
        });
    }
    Ok(AugmentationRecord {
        source_criterion_id: criterion.criterion_id.clone(),
        method_tag: AugmentationMethod::Llm,
        outputs,
        prompt_used: prompt,
        audit: entry,
    })
}

/// Paraphrase one criterion through the LLM client under the privacy policy.
/// The audit entry is appended to `log` whatever the outcome.
pub fn augment_criterion(
    criterion: &Criterion,
    template: &PromptTemplate,
    client: &dyn LlmClient,
    policy: &PrivacyPolicy,
    log: &AuditLog,
) -> Result<AugmentationRecord, AugmentError> {
    let prompt = build_prompt(template, criterion);
    let entry = gate(criterion, &prompt, policy, log);
    log.append(&entry)
        .map_err(|e| AugmentError::Audit(e.to_string()))?;
    llm_variants(criterion, template, client, &LlmOptions::default(), entry)
}

/// Which augmenter a pass runs.
pub enum Augmenter<'a> {
    Llm {
        template: PromptTemplate,
        client: &'a dyn LlmClient,
        options: LlmOptions,
    },
    SwapWord {
        k: usize,
        n_swaps: usize,
        seed: u64,
    },
    ContextWord {
        k: usize,
        filler: &'a dyn MaskFiller,
        seed: u64,
    },
    BackTranslation {
        pivots: Vec<Pivot>,
        translator: &'a dyn Translator,
    },
}

impl Augmenter<'_> {
    pub fn method(&self) -> AugmentationMethod {
        match self {
            Augmenter::Llm { .. } => AugmentationMethod::Llm,
            Augmenter::SwapWord { .. } => AugmentationMethod::SwapWord,
            Augmenter::ContextWord { .. } => AugmentationMethod::ContextWord,
            Augmenter::BackTranslation { .. } => AugmentationMethod::BackTranslation,
        }
    }

    /// Text that would leave the process for this criterion, if any.
    fn outbound(&self, criterion: &Criterion) -> Option<String> {
        match self {
            Augmenter::Llm { template, .. } => Some(build_prompt(template, criterion)),
            Augmenter::BackTranslation { .. } => Some(criterion.text.clone()),
            _ => None,
        }
    }

    fn run(
        &self,
        criterion: &Criterion,
        entry: PrivacyAuditEntry,
    ) -> Result<AugmentationRecord, AugmentError> {
        let id = &criterion.criterion_id;
        let baseline_err = |detail: String| AugmentError::Baseline {
            criterion_id: id.clone(),
            detail,
        };
        let raw: Vec<String> = match self {
            Augmenter::Llm {
                template,
                client,
                options,
            } => return llm_variants(criterion, template, *client, options, entry),
            Augmenter::SwapWord { k, n_swaps, seed } => (0..*k)
                .map(|j| {
                    swap_word_augment(
                        &criterion.text,
                        *n_swaps,
                        stable_hash(*seed, &format!("{id}/{j}")),
                    )
                })
                .collect(),
            Augmenter::ContextWord { k, filler, seed } => (0..*k)
                .map(|j| {
                    context_word_augment(
                        &criterion.text,
                        *filler,
                        stable_hash(*seed, &format!("{id}/{j}")),
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(|e| baseline_err(e.to_string()))?,
            Augmenter::BackTranslation { pivots, translator } => {
                if entry.decision == Decision::Blocked {
                    return Err(AugmentError::Blocked {
                        criterion_id: id.clone(),
                        matches: entry.matches,
                    });
                }
                pivots
                    .iter()
                    .map(|p| back_translate(&criterion.text, *p, *translator))
                    .collect::<Result<_, _>>()
                    .map_err(|e| baseline_err(e.to_string()))?
            }
        };
        let outputs = filter_outputs(&criterion.text, raw, false);
        if outputs.is_empty() {
            return Err(AugmentError::NoUsableVariants {
                criterion_id: id.clone(),
            });
        }
        Ok(AugmentationRecord {
            source_criterion_id: id.clone(),
            method_tag: self.method(),
            outputs,
            prompt_used: self.outbound(criterion).unwrap_or_default(),
            audit: entry,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AugmentSummary {
    pub criteria: usize,
    pub augmented: usize,
    pub blocked: usize,
    pub unusable: usize,
    pub variants: usize,
}

/// Augment every original criterion of `trials`, at most `parallelism`
/// requests in flight. Blocked and unusable criteria are skipped; client
/// failures abort the pass. Records and audit entries keep input order.
pub fn augment_trials(
    trials: &[Trial],
    augmenter: &Augmenter<'_>,
    policy: &PrivacyPolicy,
    log: &AuditLog,
    parallelism: usize,
) -> Result<(Vec<Trial>, Vec<AugmentationRecord>, AugmentSummary), AugmentError> {
    let originals: Vec<&Criterion> = trials.iter().flat_map(Trial::original_criteria).collect();
    let mut summary = AugmentSummary {
        criteria: originals.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for chunk in originals.chunks(parallelism.max(1)) {
        let entries: Vec<PrivacyAuditEntry> = chunk
            .iter()
            .map(|c| match augmenter.outbound(c) {
                Some(text) => gate(c, &text, policy, log),
                None => PrivacyAuditEntry {
                    timestamp: log.now(),
                    criterion_id: c.criterion_id.clone(),
                    decision: Decision::Local,
                    matches: Vec::new(),
                    prompt: None,
                },
            })
            .collect();
        for e in &entries {
            log.append(e)
                .map_err(|err| AugmentError::Audit(err.to_string()))?;
        }
        let results: Vec<Result<AugmentationRecord, AugmentError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .zip(entries)
                .map(|(c, e)| s.spawn(move || augmenter.run(c, e)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("augment worker panicked"))
                .collect()
        });
        for r in results {
            match r {
                Ok(rec) => {
                    summary.augmented += 1;
                    summary.variants += rec.outputs.len();
                    records.push(rec);
                }
                Err(AugmentError::Blocked {
                    criterion_id,
                    matches,
                }) => {
                    debug!(%criterion_id, ?matches, "blocked");
                    summary.blocked += 1;
                }
                Err(AugmentError::NoUsableVariants { criterion_id }) => {
                    warn!(%criterion_id, "no usable variants");
                    summary.unusable += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut by_trial: HashMap<&str, Vec<AugmentationRecord>> = HashMap::new();
    let owner: HashMap<&str, &str> = originals
        .iter()
        .map(|c| (c.criterion_id.as_str(), c.trial_id.as_str()))
        .collect();
    for r in &records {
        by_trial
            .entry(owner[r.source_criterion_id.as_str()])
            .or_default()
            .push(r.clone());
    }
    let out = trials
        .iter()
        .map(|t| {
            assemble_augmented_set(
                t,
                by_trial
                    .get(t.trial_id.as_str())
                    .map_or(&[][..], Vec::as_slice),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    summary.variants = out.iter().map(|t| t.n_criteria()).sum::<usize>() - originals.len();
    Ok((out, records, summary))
}

/// Originals plus the union of all record outputs as new criteria.
/// Duplicate texts of the same kind collapse to the first occurrence.
pub fn assemble_augmented_set(
    trial: &Trial,
    records: &[AugmentationRecord],
) -> Result<Trial, AugmentError> {
    let sources: HashMap<&str, &Criterion> = trial
        .original_criteria()
        .map(|c| (c.criterion_id.as_str(), c))
        .collect();
    let mut ordered: Vec<(usize, &AugmentationRecord)> = Vec::with_capacity(records.len());
    let position: HashMap<&str, usize> = trial
        .criteria()
        .enumerate()
        .map(|(i, c)| (c.criterion_id.as_str(), i))
        .collect();
    for r in records {
        if !sources.contains_key(r.source_criterion_id.as_str()) {
            return Err(AugmentError::ForeignSource {
                criterion_id: r.source_criterion_id.clone(),
                trial_id: trial.trial_id.clone(),
            });
        }
        ordered.push((position[r.source_criterion_id.as_str()], r));
    }
    ordered.sort_by_key(|(p, _)| *p);

    let mut out = trial.clone();
    let mut taken: HashSet<(CriterionKind, String)> = HashSet::new();
    let mut counters: HashMap<(&str, AugmentationMethod), usize> = HashMap::new();
    for (_, r) in ordered {
        let src = sources[r.source_criterion_id.as_str()];
        for text in &r.outputs {
            if !taken.insert((src.kind, normalize_text(text).to_lowercase())) {
                continue;
            }
            let n = counters
                .entry((src.criterion_id.as_str(), r.method_tag))
                .or_insert(0);
            *n += 1;
            out.push(Criterion {
                criterion_id: format!("{}-{}-{}", src.criterion_id, r.method_tag, n),
                trial_id: src.trial_id.clone(),
                kind: src.kind,
                text: normalize_text(text),
                provenance: Provenance::Augmented {
                    source_criterion_id: src.criterion_id.clone(),
                    method: r.method_tag,
                },
            });
        }
    }
    Ok(out)
}

/// Source criterion id -> augmented criterion ids, in trial order.
pub fn augmentation_map(trials: &[Trial]) -> BTreeMap<String, Vec<String>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for c in trials.iter().flat_map(Trial::criteria) {
        if let Provenance::Augmented {
            source_criterion_id,
            ..
        } = &c.provenance
        {
            map.entry(source_criterion_id.clone())
                .or_default()
                .push(c.criterion_id.clone());
        }
    }
    map
}

/// Each pair is followed by one copy per augmented variant of its criterion.
pub fn propagate_labels(
    pairs: &[PairExample],
    map: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<PairExample>, AugmentError> {
    let labeled: HashSet<&str> = pairs.iter().map(|p| p.criterion_id.as_str()).collect();
    for (src, augs) in map {
        if !labeled.contains(src.as_str()) {
            return Err(AugmentError::UnlabeledSource {
                augmented_id: augs[0].clone(),
                source_id: src.clone(),
            });
        }
    }
    let extra: usize = pairs
        .iter()
        .map(|p| map.get(&p.criterion_id).map_or(0, Vec::len))
        .sum();
    let mut out = Vec::with_capacity(pairs.len() + extra);
    for p in pairs {
        out.push(p.clone());
        for aug in map.get(&p.criterion_id).into_iter().flatten() {
            let mut q = p.clone();
            q.criterion_id = aug.clone();
            out.push(q);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::llm::{MockLlm, ReplayLlm};
    use crate::augmentation::privacy::PolicyMode;
    use crate::data::fixtures::{criterion, small_corpus};
    use crate::data::{validate_corpus, CriterionKind, MatchLabel, PatientRecord};

    const PREGNANCY: &str =
        "Positive urine or serum pregnancy test for women of child bearing potential.";

    fn open_policy() -> PrivacyPolicy {
        PrivacyPolicy::from_patients(&[], PolicyMode::Enforce)
    }

    fn record(src: &str, outputs: &[&str]) -> AugmentationRecord {
        AugmentationRecord {
            source_criterion_id: src.into(),
            method_tag: AugmentationMethod::Llm,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            prompt_used: String::new(),
            audit: adjudicate(src, "", &open_policy(), chrono::DateTime::UNIX_EPOCH),
        }
    }

    fn trial_2i_1e() -> Trial {
        let mut t = Trial::new("NCT1");
        t.push(criterion(
            "I1",
            "NCT1",
            CriterionKind::Inclusion,
            "History of epilepsy in adults.",
        ));
        t.push(criterion(
            "I2",
            "NCT1",
            CriterionKind::Inclusion,
            "Use of aspirin daily.",
        ));
        t.push(criterion(
            "E1",
            "NCT1",
            CriterionKind::Exclusion,
            "Known dementia at screening.",
        ));
        t
    }

    #[test]
    fn prompt_concatenation() {
        let t = PromptTemplate {
            prefix_text: "Paraphrase the eligibility criterion:".into(),
            ..Default::default()
        };
        let c = criterion(
            "C1",
            "T",
            CriterionKind::Inclusion,
            "Acute ischemic stroke patients.",
        );
        assert_eq!(
            build_prompt(&t, &c),
            "Paraphrase the eligibility criterion: Acute ischemic stroke patients."
        );
        let empty = PromptTemplate {
            prefix_text: String::new(),
            ..Default::default()
        };
        assert_eq!(build_prompt(&empty, &c), c.text);
        assert_eq!(build_prompt(&t, &c), build_prompt(&t, &c));
    }

    #[test]
    fn replayed_case_study_variant_survives_filters() {
        let t = PromptTemplate::default();
        let client = ReplayLlm::new(DEFAULT_PREFIX).with(
            "Acute ischemic stroke patients.",
            &[
                "Patients suffering from a sudden blockage of blood flow to the brain due to ischemia.",
                "People with an abrupt interruption of blood flow to the brain caused by an ischemic event.",
                "Acute ischemic stroke patients.",
            ],
        );
        let c = criterion(
            "C1",
            "T",
            CriterionKind::Inclusion,
            "Acute ischemic stroke patients.",
        );
        let log = AuditLog::in_memory();
        let rec = augment_criterion(&c, &t, &client, &open_policy(), &log).unwrap();
        assert_eq!(rec.outputs.len(), 2);
        assert!(rec.outputs[0].contains("a sudden blockage of blood flow"));
        assert_eq!(log.entries().len(), 1);
    }

    #[test]
    fn mock_variants_for_pregnancy_criterion_are_frozen() {
        let t = PromptTemplate::default();
        let client = MockLlm::new(7, DEFAULT_PREFIX);
        let c = criterion("C2", "T", CriterionKind::Exclusion, PREGNANCY);
        let rec =
            augment_criterion(&c, &t, &client, &open_policy(), &AuditLog::in_memory()).unwrap();
        assert_eq!(rec.outputs.len(), 3);
        assert!(rec.outputs.iter().all(|o| o != PREGNANCY));
        let golden = include_str!("../../tests/golden/mock_pregnancy_seed7.txt");
        assert_eq!(rec.outputs.join("\n"), golden.trim_end());
    }

    #[test]
    fn verbatim_echo_has_no_usable_variants() {
        let c = criterion(
            "C1",
            "T",
            CriterionKind::Inclusion,
            "Acute ischemic stroke patients.",
        );
        let client = ReplayLlm::new("").with(&c.text, &[&c.text, &c.text, &c.text]);
        let t = PromptTemplate {
            prefix_text: String::new(),
            ..Default::default()
        };
        let err =
            augment_criterion(&c, &t, &client, &open_policy(), &AuditLog::in_memory()).unwrap_err();
        assert_eq!(err.to_string(), "C1: no usable variants");
    }

    #[test]
    fn enforce_mode_blocks_before_request() {
        struct Panicking;
        impl LlmClient for Panicking {
            fn complete(&self, _: &LlmRequest) -> Result<Vec<String>, LlmError> {
                panic!("request sent")
            }
        }
        let patients = vec![PatientRecord {
            patient_id: "P0001".into(),
            diagnoses: vec!["acute ischemic stroke".into()],
            medications: vec![],
            procedures: vec![],
        }];
        let policy = PrivacyPolicy::from_patients(&patients, PolicyMode::Enforce);
        let c = criterion(
            "C1",
            "T",
            CriterionKind::Inclusion,
            "Acute ischemic stroke patients.",
        );
        let log = AuditLog::in_memory();
        let err = augment_criterion(&c, &PromptTemplate::default(), &Panicking, &policy, &log)
            .unwrap_err();
        assert!(matches!(err, AugmentError::Blocked { .. }));
        assert_eq!(log.entries()[0].decision, Decision::Blocked);
    }

    #[test]
    fn transport_errors_are_retried() {
        use std::sync::atomic::{AtomicU32, Ordering};
        struct Flaky(AtomicU32);
        impl LlmClient for Flaky {
            fn complete(&self, _: &LlmRequest) -> Result<Vec<String>, LlmError> {
                if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(LlmError::Transport("reset".into()))
                } else {
                    Ok(vec!["Documented seizure disorder here.".into()])
                }
            }
        }
        let c = criterion("C1", "T", CriterionKind::Inclusion, "History of epilepsy.");
        let client = Flaky(AtomicU32::new(0));
        let rec = augment_criterion(
            &c,
            &PromptTemplate::default(),
            &client,
            &open_policy(),
            &AuditLog::in_memory(),
        );
        assert!(rec.is_ok());
        assert_eq!(client.0.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn length_and_word_filters() {
        let out = filter_outputs(
            "Known dementia today.",
            vec![
                "".into(),
                "Dementia known.".into(),
                "known dementia today.".into(),
                "Established dementia today.".into(),
                "Established dementia today.".into(),
                "x ".repeat(40),
            ],
            true,
        );
        assert_eq!(out, vec!["Established dementia today."]);
    }

    #[test]
    fn union_of_records() {
        let t = trial_2i_1e();
        let out = assemble_augmented_set(
            &t,
            &[record("I1", &["a b c", "d e f"]), record("E1", &["g h i"])],
        )
        .unwrap();
        let aug: Vec<&Criterion> = out
            .criteria()
            .filter(|c| !c.provenance.is_original())
            .collect();
        assert_eq!(aug.len(), 3);
        let kinds: Vec<CriterionKind> = aug.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            [
                CriterionKind::Inclusion,
                CriterionKind::Inclusion,
                CriterionKind::Exclusion
            ]
        );
        assert_eq!(out.original_criteria().count(), 3);
        assert_eq!(aug[0].criterion_id, "I1-llm-1");
    }

    #[test]
    fn duplicates_across_records_collapse() {
        let t = trial_2i_1e();
        let out = assemble_augmented_set(&t, &[record("I1", &["a b c"]), record("I2", &["a b c"])])
            .unwrap();
        assert_eq!(out.n_criteria(), 4);
    }

    #[test]
    fn foreign_record_is_rejected() {
        let err = assemble_augmented_set(&trial_2i_1e(), &[record("X9", &["a b c"])]).unwrap_err();
        assert!(matches!(err, AugmentError::ForeignSource { .. }));
    }

    #[test]
    fn mock_pass_over_trial_gives_nine() {
        let trials = vec![trial_2i_1e()];
        let client = MockLlm::new(7, DEFAULT_PREFIX);
        let aug = Augmenter::Llm {
            template: PromptTemplate::default(),
            client: &client,
            options: LlmOptions::default(),
        };
        let (out, records, summary) =
            augment_trials(&trials, &aug, &open_policy(), &AuditLog::in_memory(), 4).unwrap();
        let total: usize = records.iter().map(|r| r.outputs.len()).sum();
        assert_eq!(total, 9);
        assert_eq!(out[0].n_criteria() - 3, 9);
        assert_eq!(summary.variants, 9);
        for c in out[0].criteria() {
            assert_eq!(c.trial_id, "NCT1");
        }
    }

    #[test]
    fn propagation_copies_labels() {
        let corpus = small_corpus();
        let records = vec![record(
            "C0001",
            &["v one here", "v two here", "v three here"],
        )];
        let trial = assemble_augmented_set(&corpus.trials[0], &records).unwrap();
        let trials = vec![trial];
        let map = augmentation_map(&trials);
        let pairs: Vec<PairExample> = corpus
            .pairs
            .iter()
            .filter(|p| p.criterion_id == "C0001")
            .cloned()
            .collect();
        let out = propagate_labels(&pairs, &map).unwrap();
        assert_eq!(out.len(), pairs.len() * 4);
        assert!(out
            .chunks(4)
            .all(|g| g.iter().all(|p| p.label == g[0].label)));
        assert!(validate_corpus(&corpus.patients, &trials, &out).is_empty());
    }

    #[test]
    fn unknown_pairs_propagate_as_unknown() {
        let mut map = BTreeMap::new();
        map.insert("C1".to_string(), vec!["C1-llm-1".to_string()]);
        let pairs = vec![PairExample::new("P1", "C1", MatchLabel::Unknown).with_origin("T2")];
        let out = propagate_labels(&pairs, &map).unwrap();
        assert_eq!(out[1].label, MatchLabel::Unknown);
        assert_eq!(out[1].origin_trial_id.as_deref(), Some("T2"));
    }

    #[test]
    fn ten_pairs_k3_gives_forty() {
        let cfg = crate::ingestion::SyntheticCorpusConfig {
            n_patients: 5,
            n_trials: 2,
            n_criteria_total: 2,
            target_pairs: 10,
            ..Default::default()
        };
        let c = crate::ingestion::generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(c.gold.len(), 10);
        let mut map = BTreeMap::new();
        for t in &c.trials {
            for cr in t.criteria() {
                map.insert(
                    cr.criterion_id.clone(),
                    (1..=3)
                        .map(|j| format!("{}-x-{j}", cr.criterion_id))
                        .collect(),
                );
            }
        }
        assert_eq!(propagate_labels(&c.gold, &map).unwrap().len(), 40);
    }

    #[test]
    fn unlabeled_source_is_an_error() {
        let mut map = BTreeMap::new();
        map.insert("C9".to_string(), vec!["C9-llm-1".to_string()]);
        let err =
            propagate_labels(&[PairExample::new("P1", "C1", MatchLabel::Match)], &map).unwrap_err();
        assert!(matches!(err, AugmentError::UnlabeledSource { .. }));
    }
}
