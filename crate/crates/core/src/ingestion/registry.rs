//! Trial registry access.
//!
//! [`RegistryClient`] has a live implementation against the ClinicalTrials.gov
//! v2 API (eligibility module only) and two offline ones: a fixture directory
//! holding recorded v2 responses and an in-memory canned map.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

const CT_API_URL: &str = "https://clinicaltrials.gov/api/v2/studies";

static NCT_PATTERN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^NCT\d{8}$").unwrap());

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid trial id `{0}`: expected NCT followed by 8 digits")]
    InvalidId(String),
    #[error("trial {0} not found in registry")]
    NotFound(String),
    #[error("transport error fetching {nct_id} after {retries} retries: {detail}")]
    Transport {
        nct_id: String,
        retries: u32,
        detail: String,
    },
    #[error("registry response for {nct_id} has no eligibility criteria")]
    MissingEligibility { nct_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTrialDocument {
    pub trial_id: String,
    pub eligibility_text: String,
    pub fetched_at: DateTime<Utc>,
}

pub trait RegistryClient: Send + Sync {
    /// Eligibility-criteria text block for a validated NCT id.
    fn eligibility_text(&self, nct_id: &str) -> Result<String, RegistryError>;

    /// Timestamp recorded on fetched documents. Offline clients pin it.
    fn fetched_at(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub fn is_valid_nct_id(id: &str) -> bool {
    NCT_PATTERN.is_match(id)
}

pub fn fetch_trial_criteria(
    nct_id: &str,
    client: &dyn RegistryClient,
) -> Result<RawTrialDocument, RegistryError> {
    if !is_valid_nct_id(nct_id) {
        return Err(RegistryError::InvalidId(nct_id.to_string()));
    }
    let eligibility_text = client.eligibility_text(nct_id)?;
    if eligibility_text.trim().is_empty() {
        return Err(RegistryError::MissingEligibility {
            nct_id: nct_id.to_string(),
        });
    }
    Ok(RawTrialDocument {
        trial_id: nct_id.to_string(),
        eligibility_text,
        fetched_at: client.fetched_at(),
    })
}

/// Fetch several trials with at most `parallelism` requests in flight.
/// Results keep the order of `ids`.
pub fn fetch_many(
    ids: &[String],
    client: &dyn RegistryClient,
    parallelism: usize,
) -> Vec<Result<RawTrialDocument, RegistryError>> {
    let parallelism = parallelism.max(1);
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(parallelism) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|id| s.spawn(move || fetch_trial_criteria(id, client)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fetch worker panicked"))
                .collect()
        });
        out.extend(results);
    }
    out
}

/// Pull `protocolSection.eligibilityModule.eligibilityCriteria` out of a v2
/// study document.
pub fn extract_eligibility(study: &serde_json::Value) -> Option<&str> {
    study
        .pointer("/protocolSection/eligibilityModule/eligibilityCriteria")
        .and_then(serde_json::Value::as_str)
}

pub struct LiveRegistryClient {
    http: reqwest::blocking::Client,
    max_retries: u32,
    base_url: String,
}

impl LiveRegistryClient {
    pub fn new(max_retries: u32) -> Result<Self, RegistryError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| RegistryError::Transport {
                nct_id: String::new(),
                retries: 0,
                detail: e.to_string(),
            })?;
        Ok(Self {
            http,
            max_retries,
            base_url: CT_API_URL.to_string(),
        })
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }
}

impl RegistryClient for LiveRegistryClient {
    fn eligibility_text(&self, nct_id: &str) -> Result<String, RegistryError> {
        let url = format!(
            "{}/{}?format=json&fields=protocolSection.eligibilityModule",
            self.base_url, nct_id
        );
        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * u64::from(attempt)));
            }
            debug!(%url, attempt, "fetching eligibility module");
            let resp = self.http.get(&url).send();
            match resp {
                Ok(r) if r.status() == reqwest::StatusCode::NOT_FOUND => {
                    return Err(RegistryError::NotFound(nct_id.to_string()))
                }
                Ok(r) if r.status().is_success() => {
                    let body: serde_json::Value =
                        r.json().map_err(|e| RegistryError::Transport {
                            nct_id: nct_id.to_string(),
                            retries: attempt,
                            detail: e.to_string(),
                        })?;
                    return extract_eligibility(&body)
                        .map(str::to_string)
                        .ok_or_else(|| RegistryError::MissingEligibility {
                            nct_id: nct_id.to_string(),
                        });
                }
                Ok(r) => last_err = format!("HTTP {}", r.status()),
                Err(e) => last_err = e.to_string(),
            }
            warn!(nct_id, attempt, error = %last_err, "registry request failed");
        }
        Err(RegistryError::Transport {
            nct_id: nct_id.to_string(),
            retries: self.max_retries,
            detail: last_err,
        })
    }
}

/// Replays recorded v2 responses from `<dir>/<nct>.json`.
pub struct FixtureRegistry {
    dir: PathBuf,
}

impl FixtureRegistry {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }
}

impl RegistryClient for FixtureRegistry {
    fn eligibility_text(&self, nct_id: &str) -> Result<String, RegistryError> {
        let path = self.dir.join(format!("{nct_id}.json"));
        let raw = std::fs::read_to_string(&path)
            .map_err(|_| RegistryError::NotFound(nct_id.to_string()))?;
        let study: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| RegistryError::Transport {
                nct_id: nct_id.to_string(),
                retries: 0,
                detail: format!("{}: {e}", path.display()),
            })?;
        extract_eligibility(&study)
            .map(str::to_string)
            .ok_or_else(|| RegistryError::MissingEligibility {
                nct_id: nct_id.to_string(),
            })
    }

    fn fetched_at(&self) -> DateTime<Utc> {
        DateTime::UNIX_EPOCH
    }
}

/// In-memory bodies keyed by NCT id.
#[derive(Default)]
pub struct CannedRegistry {
    bodies: HashMap<String, String>,
}

impl CannedRegistry {
    pub fn with(mut self, nct_id: &str, body: &str) -> Self {
        self.bodies.insert(nct_id.to_string(), body.to_string());
        self
    }
}

impl RegistryClient for CannedRegistry {
    fn eligibility_text(&self, nct_id: &str) -> Result<String, RegistryError> {
        self.bodies
            .get(nct_id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(nct_id.to_string()))
    }

    fn fetched_at(&self) -> DateTime<Utc> {
        DateTime::UNIX_EPOCH
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct CountingClient(AtomicUsize);

    impl RegistryClient for CountingClient {
        fn eligibility_text(&self, _: &str) -> Result<String, RegistryError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("Inclusion Criteria: - A.".into())
        }
    }

    fn fixture_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/registry")
    }

    #[test]
    fn recorded_fixture_has_both_sections() {
        let doc =
            fetch_trial_criteria("NCT03263117", &FixtureRegistry::new(fixture_dir())).unwrap();
        assert!(doc.eligibility_text.contains("Inclusion Criteria"));
        assert!(doc.eligibility_text.contains("Exclusion Criteria"));
        assert_eq!(doc.fetched_at, DateTime::UNIX_EPOCH);
    }

    #[test]
    fn bad_id_fails_before_any_request() {
        let client = CountingClient(AtomicUsize::new(0));
        let err = fetch_trial_criteria("BADID", &client).unwrap_err();
        assert!(matches!(err, RegistryError::InvalidId(_)));
        assert_eq!(client.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn canned_body_is_replayed_verbatim() {
        let client = CannedRegistry::default().with("NCT00000001", "Inclusion Criteria: - A.");
        let doc = fetch_trial_criteria("NCT00000001", &client).unwrap();
        assert_eq!(doc.eligibility_text, "Inclusion Criteria: - A.");
        let again = fetch_trial_criteria("NCT00000001", &client).unwrap();
        assert_eq!(doc, again);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let err =
            fetch_trial_criteria("NCT99999999", &FixtureRegistry::new(fixture_dir())).unwrap_err();
        assert!(matches!(err, RegistryError::NotFound(_)));
    }

    #[test]
    fn fetch_many_preserves_order() {
        let client = CannedRegistry::default()
            .with("NCT00000001", "Inclusion Criteria: - A.")
            .with("NCT00000002", "Inclusion Criteria: - B.");
        let ids: Vec<String> = ["NCT00000002", "BAD", "NCT00000001"]
            .map(String::from)
            .to_vec();
        let docs = fetch_many(&ids, &client, 2);
        assert_eq!(
            docs[0].as_ref().unwrap().eligibility_text,
            "Inclusion Criteria: - B."
        );
        assert!(docs[1].is_err());
        assert_eq!(docs[2].as_ref().unwrap().trial_id, "NCT00000001");
    }
}
