//! Eligibility-text parsing into sentence-level criteria, and the inverse
//! rendering used for synthetic trials.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::data::{normalize_text, Criterion, CriterionKind, Provenance, Trial};
use crate::ingestion::registry::RawTrialDocument;

static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d{1,3}[.)])\s+(.*)$").unwrap());

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{trial_id}: no criteria sections")]
    NoSections { trial_id: String },
    #[error("{trial_id}: empty eligibility text")]
    Empty { trial_id: String },
}

/// Match a section heading at the start of a line; returns the kind and the
/// rest of the line after the heading and an optional colon.
fn heading(line: &str) -> Option<(CriterionKind, &str)> {
    let trimmed = line.trim_start();
    let lower = trimmed.to_ascii_lowercase();
    for (phrase, kind) in [
        ("inclusion criteria", CriterionKind::Inclusion),
        ("exclusion criteria", CriterionKind::Exclusion),
    ] {
        if lower.starts_with(phrase) {
            let rest = trimmed[phrase.len()..].trim_start();
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            return Some((kind, rest));
        }
    }
    None
}

/// Split prose at ". " boundaries, keeping the period.
fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for i in 0..bytes.len() {
        if bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_whitespace) {
            out.push(normalize_text(&text[start..=i]));
            start = i + 1;
        }
    }
    out.push(normalize_text(&text[start..]));
    out.retain(|s| !s.is_empty());
    out
}

/// Bullets first; lines that follow a bullet continue it; anything before the
/// first bullet (or a section without bullets) falls back to sentences.
fn split_statements(lines: &[&str]) -> Vec<String> {
    let has_bullets = lines.iter().any(|l| BULLET.is_match(l));
    if !has_bullets {
        return split_sentences(&lines.join(" "));
    }
    let mut out: Vec<String> = Vec::new();
    let mut in_bullet = false;
    for line in lines {
        if let Some(caps) = BULLET.captures(line) {
            out.push(caps[1].to_string());
            in_bullet = true;
        } else if in_bullet {
            let last = out.last_mut().expect("bullet pushed");
            last.push(' ');
            last.push_str(line);
        } else {
            out.extend(split_sentences(line));
        }
    }
    out.into_iter()
        .map(|s| normalize_text(&s))
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn parse_eligibility(raw: &RawTrialDocument) -> Result<Trial, ParseError> {
    if raw.eligibility_text.trim().is_empty() {
        return Err(ParseError::Empty {
            trial_id: raw.trial_id.clone(),
        });
    }
    let mut sections: Vec<(CriterionKind, Vec<&str>)> = Vec::new();
    for line in raw.eligibility_text.lines() {
        if let Some((kind, rest)) = heading(line) {
            sections.push((kind, Vec::new()));
            if !rest.trim().is_empty() {
                sections.last_mut().unwrap().1.push(rest);
            }
        } else if let Some((_, body)) = sections.last_mut() {
            if !line.trim().is_empty() {
                body.push(line);
            }
        }
    }
    if sections.is_empty() {
        return Err(ParseError::NoSections {
            trial_id: raw.trial_id.clone(),
        });
    }

    let mut trial = Trial::new(&raw.trial_id);
    for (kind, body) in sections {
        for text in split_statements(&body) {
            let (tag, n) = match kind {
                CriterionKind::Inclusion => ("I", trial.inclusion.len() + 1),
                CriterionKind::Exclusion => ("E", trial.exclusion.len() + 1),
            };
            trial.push(Criterion {
                criterion_id: format!("{}-{tag}{n:02}", raw.trial_id),
                trial_id: raw.trial_id.clone(),
                kind,
                text,
                provenance: Provenance::Original,
            });
        }
    }
    Ok(trial)
}

/// Registry-style text for a trial's original criteria.
pub fn render_eligibility(trial: &Trial) -> String {
    let mut out = String::from("Inclusion Criteria:\n\n");
    for c in trial
        .inclusion
        .iter()
        .filter(|c| c.provenance.is_original())
    {
        out.push_str("* ");
        out.push_str(&c.text);
        out.push('\n');
    }
    out.push_str("\nExclusion Criteria:\n\n");
    for c in trial
        .exclusion
        .iter()
        .filter(|c| c.provenance.is_original())
    {
        out.push_str("* ");
        out.push_str(&c.text);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::registry::{fetch_trial_criteria, FixtureRegistry};
    use chrono::DateTime;
    use proptest::prelude::*;

    fn doc(text: &str) -> RawTrialDocument {
        RawTrialDocument {
            trial_id: "NCT03263117".into(),
            eligibility_text: text.into(),
            fetched_at: DateTime::UNIX_EPOCH,
        }
    }

    fn texts(list: &[Criterion]) -> Vec<&str> {
        list.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn dash_bullets_split_by_section() {
        let t = parse_eligibility(&doc(
            "Inclusion Criteria:\n- Acute ischemic stroke patients.\nExclusion Criteria:\n- Positive urine or serum pregnancy test for women of child bearing potential.",
        ))
        .unwrap();
        assert_eq!(texts(&t.inclusion), ["Acute ischemic stroke patients."]);
        assert_eq!(
            texts(&t.exclusion),
            ["Positive urine or serum pregnancy test for women of child bearing potential."]
        );
        assert_eq!(t.inclusion[0].criterion_id, "NCT03263117-I01");
        assert_eq!(t.exclusion[0].kind, CriterionKind::Exclusion);
    }

    #[test]
    fn inclusion_only_document() {
        let t =
            parse_eligibility(&doc("INCLUSION CRITERIA\n* Age 18 or older.\n* Stroke.")).unwrap();
        assert_eq!(t.inclusion.len(), 2);
        assert!(t.exclusion.is_empty());
    }

    #[test]
    fn three_bullets_per_section() {
        let t = parse_eligibility(&doc(
            "Inclusion Criteria:\n\n1. One.\n2) Two.\n3. Three.\n\nExclusion Criteria:\n\n• Four.\n• Five\n  continued.\n• Six.",
        ))
        .unwrap();
        assert_eq!(t.inclusion.len(), 3);
        assert_eq!(t.exclusion.len(), 3);
        assert_eq!(t.exclusion[1].text, "Five continued.");
    }

    #[test]
    fn single_line_heading_with_inline_bullet() {
        let t = parse_eligibility(&doc("Inclusion Criteria: - A.")).unwrap();
        assert_eq!(texts(&t.inclusion), ["A."]);
    }

    #[test]
    fn sentence_fallback_without_bullets() {
        let t = parse_eligibility(&doc(
            "Inclusion criteria: Adults with stroke. Able to consent.\nExclusion criteria: Pregnancy.",
        ))
        .unwrap();
        assert_eq!(
            texts(&t.inclusion),
            ["Adults with stroke.", "Able to consent."]
        );
        assert_eq!(texts(&t.exclusion), ["Pregnancy."]);
    }

    #[test]
    fn missing_headings_is_an_error() {
        let err = parse_eligibility(&doc("Patients must be adults.")).unwrap_err();
        assert_eq!(err.to_string(), "NCT03263117: no criteria sections");
    }

    #[test]
    fn recorded_fixtures_parse() {
        let client = FixtureRegistry::new(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/registry"),
        );
        let raw = fetch_trial_criteria("NCT03263117", &client).unwrap();
        let t = parse_eligibility(&raw).unwrap();
        assert_eq!(t.inclusion[0].text, "Acute ischemic stroke patients.");
        assert!(!t.exclusion.is_empty());
    }

    proptest! {
        #[test]
        fn render_then_parse_preserves_texts(
            inc in prop::collection::vec("[A-Za-z][A-Za-z0-9 ,.()<>=%-]{0,40}", 0..5),
            exc in prop::collection::vec("[A-Za-z][A-Za-z0-9 ,.()<>=%-]{0,40}", 0..5),
        ) {
            let mut trial = Trial::new("NCT90000001");
            for (i, t) in inc.iter().chain(&exc).enumerate() {
                let text = normalize_text(t);
                let kind = if i < inc.len() { CriterionKind::Inclusion } else { CriterionKind::Exclusion };
                trial.push(Criterion {
                    criterion_id: format!("C{i}"),
                    trial_id: trial.trial_id.clone(),
                    kind,
                    text,
                    provenance: Provenance::Original,
                });
            }
            let raw = RawTrialDocument {
                trial_id: trial.trial_id.clone(),
                eligibility_text: render_eligibility(&trial),
                fetched_at: DateTime::UNIX_EPOCH,
            };
            let parsed = parse_eligibility(&raw).unwrap();
            prop_assert_eq!(texts(&parsed.inclusion), texts(&trial.inclusion));
            prop_assert_eq!(texts(&parsed.exclusion), texts(&trial.exclusion));
        }
    }
}
