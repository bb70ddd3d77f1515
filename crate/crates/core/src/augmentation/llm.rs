//! LLM client interface plus a seeded phrase-substitution mock, a replay
//! client, and an OpenAI-compatible HTTP client.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::normalize_text;
use crate::ingestion::vocabulary::phrase_groups;
use crate::seed::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("LLM transport error: {0}")]
    Transport(String),
    #[error("LLM configuration error: {0}")]
    Config(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError>;
}

/// Variants used when the text contains no known phrase.
const FALLBACK_FRAMES: &[&str] = &[
    "Participants must meet the following condition: {}",
    "Eligibility requires the following: {}",
    "As stated in the protocol: {}",
    "The following applies to participants: {}",
];

/// Seeded synonym engine. Every known phrase found in the text is swapped for
/// another member of its group; output depends only on (seed, prompt, n).
pub struct MockLlm {
    seed: u64,
    prefix: String,
    groups: Vec<Vec<String>>,
    /// (lowercased phrase, group index), longest first
    index: Vec<(String, usize)>,
}

impl MockLlm {
    /// `prefix` is the prompt preamble to strip before paraphrasing.
    pub fn new(seed: u64, prefix: &str) -> Self {
        let groups: Vec<Vec<String>> = phrase_groups()
            .into_iter()
            .map(|g| g.into_iter().map(String::from).collect())
            .collect();
        let mut index: Vec<(String, usize)> = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.iter().map(move |p| (p.to_lowercase(), gi)))
            .collect();
        index.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Self {
            seed,
            prefix: prefix.to_string(),
            groups,
            index,
        }
    }

    fn strip_prefix<'a>(&self, prompt: &'a str) -> &'a str {
        if self.prefix.is_empty() {
            return prompt.trim();
        }
        prompt
            .strip_prefix(self.prefix.as_str())
            .unwrap_or(prompt)
            .trim()
    }

    /// Non-overlapping known-phrase spans as (start, end, group).
    fn spans(&self, text: &str) -> Vec<(usize, usize, usize)> {
        let lower = text.to_lowercase();
        // lowercase must keep byte offsets aligned
        if lower.len() != text.len() {
            return Vec::new();
        }
        let bytes = lower.as_bytes();
        let boundary = |i: usize| i == 0 || i >= bytes.len() || !bytes[i].is_ascii_alphanumeric();
        let mut taken = vec![false; lower.len()];
        let mut spans = Vec::new();
        for (phrase, gi) in &self.index {
            let mut from = 0;
            while let Some(off) = lower[from..].find(phrase.as_str()) {
                let s = from + off;
                let e = s + phrase.len();
                let prev_ok = s == 0 || boundary(s - 1);
                if prev_ok && boundary(e) && !taken[s..e].iter().any(|&t| t) {
                    taken[s..e].iter_mut().for_each(|t| *t = true);
                    spans.push((s, e, *gi));
                }
                from = s + 1;
                while from < lower.len() && !lower.is_char_boundary(from) {
                    from += 1;
                }
            }
        }
        spans.sort_unstable();
        spans
    }

    fn render<R: Rng>(&self, text: &str, spans: &[(usize, usize, usize)], rng: &mut R) -> String {
        let mut out = String::with_capacity(text.len() * 2);
        let mut cursor = 0;
        let forced = rng.random_range(0..spans.len());
        for (k, &(s, e, gi)) in spans.iter().enumerate() {
            out.push_str(&text[cursor..s]);
            let original = &text[s..e];
            let change = k == forced || rng.random_bool(0.6);
            let options: Vec<&String> = self.groups[gi]
                .iter()
                .filter(|p| !p.eq_ignore_ascii_case(original))
                .collect();
            let chosen = match options.choose(rng) {
                Some(p) if change => p.as_str(),
                _ => original,
            };
            out.push_str(&match_case(chosen, original, s == 0));
            cursor = e;
        }
        out.push_str(&text[cursor..]);
        normalize_text(&out)
    }
}

/// Sentence-initial replacements are capitalized; mid-sentence ones follow
/// the replaced text's leading case unless they start with an acronym.
fn match_case(replacement: &str, original: &str, sentence_start: bool) -> String {
    let mut chars = replacement.chars();
    let Some(first) = chars.next() else {
        return String::new();
    };
    let acronym = replacement.chars().take(2).all(char::is_uppercase);
    let lead = if sentence_start || original.starts_with(char::is_uppercase) {
        first.to_uppercase().collect::<String>()
    } else if acronym {
        first.to_string()
    } else {
        first.to_lowercase().collect()
    };
    lead + chars.as_str()
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        let text = normalize_text(self.strip_prefix(&request.prompt));
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.seed, &text));
        let spans = self.spans(&text);
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(request.n);
        if spans.is_empty() {
            let mut frames: Vec<&&str> = FALLBACK_FRAMES.iter().collect();
            frames.sort_by_key(|_| rng.random::<u32>());
            for f in frames.into_iter().take(request.n) {
                out.push(f.replace("{}", &text));
            }
            return Ok(out);
        }
        for _ in 0..request.n * 16 {
            if out.len() == request.n {
                break;
            }
            let v = self.render(&text, &spans, &mut rng);
            if v != text && seen.insert(v.to_lowercase()) {
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// Returns stored completions keyed by the text after the prefix.
#[derive(Default)]
pub struct ReplayLlm {
    prefix: String,
    completions: HashMap<String, Vec<String>>,
}

impl ReplayLlm {
    pub fn new(prefix: &str) -> Self {
        Self {
            prefix: prefix.to_string(),
            completions: HashMap::new(),
        }
    }

    pub fn with(mut self, source: &str, outputs: &[&str]) -> Self {
        self.completions.insert(
            normalize_text(source),
            outputs.iter().map(|s| s.to_string()).collect(),
        );
        self
    }
}

impl LlmClient for ReplayLlm {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        let text = request
            .prompt
            .strip_prefix(self.prefix.as_str())
            .unwrap_or(&request.prompt);
        self.completions
            .get(&normalize_text(text))
            .map(|v| v.iter().take(request.n).cloned().collect())
            .ok_or_else(|| {
                LlmError::Transport(format!(
                    "no recorded completion for `{}`",
                    normalize_text(text)
                ))
            })
    }
}

/// Chat-completions client. The API key is read from the named environment
/// variable at construction.
pub struct OpenAiCompatibleClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: String,
}

impl OpenAiCompatibleClient {
    pub fn from_env(endpoint: &str, model: &str, api_key_env: &str) -> Result<Self, LlmError> {
        let api_key = std::env::var(api_key_env).map_err(|_| {
            LlmError::Config(format!("environment variable {api_key_env} is not set"))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl LlmClient for OpenAiCompatibleClient {
    fn complete(&self, request: &LlmRequest) -> Result<Vec<String>, LlmError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "n": request.n,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let resp = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(LlmError::Transport(format!("HTTP {}", resp.status())));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content)
            .collect())
    }
}
