//! Registry access, eligibility parsing, synthetic corpora and labeled pairs.

pub mod pairs;
pub mod parse;
pub mod registry;
pub mod synthetic;
pub mod vocabulary;

pub use pairs::{build_pair_dataset, PairError};
pub use parse::{parse_eligibility, render_eligibility, ParseError};
pub use registry::{
    fetch_many, fetch_trial_criteria, CannedRegistry, FixtureRegistry, LiveRegistryClient,
    RawTrialDocument, RegistryClient, RegistryError,
};
pub use synthetic::{
    generate_synthetic_corpus, PairingMode, SyntheticCorpus, SyntheticCorpusConfig,
};
