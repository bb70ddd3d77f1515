//! Baseline augmenters: word swap, masked-word insertion, back translation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const MASK_TOKEN: &str = "[MASK]";

/// `n_swaps` seeded transpositions of two distinct word positions.
pub fn swap_word_augment(text: &str, n_swaps: usize, seed: u64) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 2 || n_swaps == 0 {
        return words.join(" ");
    }
    let mut rng = rng_for(seed, "swap-word");
    for _ in 0..n_swaps {
        let picked = sample(&mut rng, words.len(), 2);
        words.swap(picked.index(0), picked.index(1));
    }
    words.join(" ")
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("mask filler failed: {0}")]
pub struct FillError(pub String);

pub trait MaskFiller: Send + Sync {
    /// Top prediction for `tokens[mask_index]`, which holds [`MASK_TOKEN`].
    fn fill(&self, tokens: &[&str], mask_index: usize) -> Result<String, FillError>;
}

/// Always predicts the same word.
pub struct ConstantFiller(pub String);

impl MaskFiller for ConstantFiller {
    fn fill(&self, _: &[&str], _: usize) -> Result<String, FillError> {
        Ok(self.0.clone())
    }
}

/// Predicts from the word to the left of the mask; falls back to a default.
pub struct DictionaryFiller {
    after: HashMap<String, String>,
    default: String,
}

impl Default for DictionaryFiller {
    fn default() -> Self {
        let after = [
            ("of", "prior"),
            ("with", "known"),
            ("history", "clinical"),
            ("patients", "adult"),
            ("use", "regular"),
            ("diagnosis", "confirmed"),
            ("receiving", "daily"),
            ("underwent", "elective"),
            ("taking", "oral"),
            ("known", "chronic"),
            ("prior", "recent"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            after,
            default: "patients".into(),
        }
    }
}

impl MaskFiller for DictionaryFiller {
    fn fill(&self, tokens: &[&str], mask_index: usize) -> Result<String, FillError> {
        let left = mask_index.checked_sub(1).map(|i| {
            tokens[i]
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        });
        Ok(left
            .and_then(|w| self.after.get(&w).cloned())
            .unwrap_or_else(|| self.default.clone()))
    }
}

/// Insert a mask at a seeded position (0..=len) and fill it.
pub fn context_word_augment(
    text: &str,
    filler: &dyn MaskFiller,
    seed: u64,
) -> Result<String, FillError> {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let mut rng = rng_for(seed, "context-word");
    let pos = rng.random_range(0..=words.len());
    words.insert(pos, MASK_TOKEN);
    let word = filler.fill(&words, pos)?;
    let word = word.trim();
    if word.is_empty() || word.contains(char::is_whitespace) {
        return Err(FillError(format!(
            "filler returned `{word}`, expected one word"
        )));
    }
    words[pos] = word;
    Ok(words.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pivot {
    De,
    Fr,
    Es,
}

impl Pivot {
    pub const ALL: [Pivot; 3] = [Pivot::De, Pivot::Fr, Pivot::Es];

    pub fn code(self) -> &'static str {
        match self {
            Pivot::De => "de",
            Pivot::Fr => "fr",
            Pivot::Es => "es",
        }
    }
}

impl fmt::Display for Pivot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Pivot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pivot::ALL
            .into_iter()
            .find(|p| p.code() == s)
            .ok_or_else(|| format!("unsupported pivot language `{s}` (expected de, fr or es)"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranslateError {
    #[error("translation via {pivot} failed: {detail}")]
    Transport { pivot: Pivot, detail: String },
    #[error("translation via {pivot} returned empty text")]
    Empty { pivot: Pivot },
}

pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String>;
}

pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _: &str, _: &str) -> Result<String, String> {
        Ok(text.to_string())
    }
}

/// Canned phrase tables: English phrase -> pivot phrase -> English phrase.
/// Round trips reorder wording the way a real system tends to.
pub struct PhraseTableTranslator {
    tables: HashMap<Pivot, Vec<(&'static str, &'static str, &'static str)>>,
}

impl Default for PhraseTableTranslator {
    fn default() -> Self {
        let mut tables = HashMap::new();
        tables.insert(
            Pivot::De,
            vec![
                (
                    "stroke patients",
                    "Schlaganfallpatienten",
                    "patients with stroke",
                ),
                ("history of", "Vorgeschichte von", "previous history of"),
                (
                    "pregnancy test",
                    "Schwangerschaftstest",
                    "test for pregnancy",
                ),
                ("currently taking", "nimmt derzeit", "is currently taking"),
            ],
        );
        tables.insert(
            Pivot::Fr,
            vec![
                (
                    "stroke patients",
                    "patients victimes d'AVC",
                    "patients who suffered a stroke",
                ),
                ("history of", "antécédents de", "antecedents of"),
                ("pregnancy test", "test de grossesse", "test of pregnancy"),
                ("use of", "utilisation de", "utilization of"),
            ],
        );
        tables.insert(
            Pivot::Es,
            vec![
                (
                    "stroke patients",
                    "pacientes con ictus",
                    "patients with ictus",
                ),
                ("history of", "historial de", "record of"),
                ("pregnancy test", "prueba de embarazo", "proof of pregnancy"),
                ("known", "conocido", "recognized"),
            ],
        );
        Self { tables }
    }
}

fn replace_ci(text: &str, from: &str, to: &str) -> String {
    let lower = text.to_lowercase();
    let needle = from.to_lowercase();
    if lower.len() != text.len() {
        return text.replace(from, to);
    }
    let mut out = String::new();
    let mut cursor = 0;
    while let Some(off) = lower[cursor..].find(&needle) {
        let s = cursor + off;
        out.push_str(&text[cursor..s]);
        let original = &text[s..s + needle.len()];
        let mut c = to.chars();
        if let Some(f) = c.next() {
            if original.starts_with(char::is_uppercase) {
                out.extend(f.to_uppercase());
            } else {
                out.extend(f.to_lowercase());
            }
            out.push_str(c.as_str());
        }
        cursor = s + needle.len();
    }
    out.push_str(&text[cursor..]);
    out
}

impl Translator for PhraseTableTranslator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        let (pivot, forward) = match (source, target) {
            ("en", p) => (p, true),
            (p, "en") => (p, false),
            _ => return Err(format!("unsupported direction {source}->{target}")),
        };
        let pivot: Pivot = pivot.parse()?;
        let table = &self.tables[&pivot];
        let mut out = text.to_string();
        for (en, foreign, back) in table {
            out = if forward {
                replace_ci(&out, en, foreign)
            } else {
                replace_ci(&out, foreign, back)
            };
        }
        Ok(out)
    }
}

/// LibreTranslate-style HTTP translator.
pub struct HttpTranslator {
    http: reqwest::blocking::Client,
    endpoint: String,
}

impl HttpTranslator {
    pub fn new(endpoint: &str) -> Result<Self, String> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            http,
            endpoint: endpoint.to_string(),
        })
    }
}

#[derive(Deserialize)]
struct TranslateResponse {
    #[serde(rename = "translatedText")]
    translated_text: String,
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, String> {
        let resp = self
            .http
            .post(&self.endpoint)
            .json(&serde_json::json!({"q": text, "source": source, "target": target, "format": "text"}))
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        resp.json::<TranslateResponse>()
            .map(|r| r.translated_text)
            .map_err(|e| e.to_string())
    }
}

pub fn back_translate(
    text: &str,
    pivot: Pivot,
    translator: &dyn Translator,
) -> Result<String, TranslateError> {
    let transport = |detail| TranslateError::Transport { pivot, detail };
    let there = translator
        .translate(text, "en", pivot.code())
        .map_err(transport)?;
    let back = translator
        .translate(&there, pivot.code(), "en")
        .map_err(transport)?;
    let back = crate::data::normalize_text(&back);
    if back.is_empty() && !text.trim().is_empty() {
        return Err(TranslateError::Empty { pivot });
    }
    Ok(back)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted_words(s: &str) -> Vec<&str> {
        let mut w: Vec<&str> = s.split_whitespace().collect();
        w.sort_unstable();
        w
    }

    #[test]
    fn zero_swaps_is_identity() {
        assert_eq!(
            swap_word_augment("Known   dementia.", 0, 1),
            "Known dementia."
        );
    }

    #[test]
    fn three_words_single_swap_traced() {
        // Frozen from the seeded sampler: seed 10 picks positions {0, 2}.
        let picked = sample(&mut rng_for(10, "swap-word"), 3, 2);
        let mut pos = [picked.index(0), picked.index(1)];
        pos.sort_unstable();
        assert_eq!(pos, [0, 2]);
        assert_eq!(swap_word_augment("a b c", 1, 10), "c b a");
    }

    #[test]
    fn constant_filler_at_end() {
        // Seed 11 inserts at position 2 of a two-word text (the end).
        let out = context_word_augment("Known dementia.", &ConstantFiller("patients".into()), 11)
            .unwrap();
        assert_eq!(out, "Known dementia. patients");
    }

    #[test]
    fn dictionary_filler_is_deterministic() {
        let f = DictionaryFiller::default();
        let a = context_word_augment("History of epilepsy.", &f, 9).unwrap();
        assert_eq!(
            a,
            context_word_augment("History of epilepsy.", &f, 9).unwrap()
        );
        assert_eq!(a.split_whitespace().count(), 4);
    }

    #[test]
    fn identity_round_trip() {
        assert_eq!(
            back_translate(
                "Acute ischemic stroke patients.",
                Pivot::Fr,
                &IdentityTranslator
            )
            .unwrap(),
            "Acute ischemic stroke patients."
        );
    }

    #[test]
    fn phrase_table_german() {
        let t = PhraseTableTranslator::default();
        assert_eq!(
            back_translate("stroke patients", Pivot::De, &t).unwrap(),
            "patients with stroke"
        );
        assert_eq!(
            back_translate("Acute ischemic stroke patients.", Pivot::De, &t).unwrap(),
            "Acute ischemic patients with stroke."
        );
    }

    struct Failing;
    impl Translator for Failing {
        fn translate(&self, _: &str, _: &str, _: &str) -> Result<String, String> {
            Err("connection refused".into())
        }
    }

    #[test]
    fn transport_error_names_pivot() {
        let err = back_translate("x", Pivot::Es, &Failing).unwrap_err();
        assert!(err.to_string().contains("via es"), "{err}");
    }

    proptest! {
        #[test]
        fn swaps_preserve_token_multiset(text in "[a-z]{1,6}( [a-z]{1,6}){0,10}", n in 0usize..8, seed: u64) {
            let out = swap_word_augment(&text, n, seed);
            prop_assert_eq!(sorted_words(&out), sorted_words(&text));
        }

        #[test]
        fn context_insertion_adds_one_word(text in "[a-z]{1,6}( [a-z]{1,6}){0,10}", seed: u64) {
            let out = context_word_augment(&text, &DictionaryFiller::default(), seed).unwrap();
            prop_assert_eq!(out.split_whitespace().count(), text.split_whitespace().count() + 1);
        }

        #[test]
        fn back_translation_non_empty(text in "[A-Za-z]{1,8}( [a-z]{1,8}){0,6}", idx in 0usize..3) {
            let out = back_translate(&text, Pivot::ALL[idx], &PhraseTableTranslator::default()).unwrap();
            prop_assert!(!out.is_empty());
        }
    }
}
