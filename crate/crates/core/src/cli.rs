//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors (bad flags,
//! missing or malformed inputs, invalid configuration), 2 on runtime
//! failures. Every run writes a manifest next to its outputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::augmentation::{
    augment_trials, augmentation_map, propagate_labels, AuditLog, Augmenter, ConstantFiller,
    DictionaryFiller, HttpTranslator, IdentityTranslator, LlmClient, LlmOptions, MaskFiller,
    MockLlm, OpenAiCompatibleClient, PhraseTableTranslator, Pivot, PolicyMode, PrivacyPolicy,
    PromptTemplate, Translator, DEFAULT_PREFIX,
};
use crate::data::{
    criterion_index, load_pairs, load_patients, load_trials, save_corpus, save_pairs,
    save_patients, save_trials, validate_corpus, write_jsonl, Corpus, CorpusError, Difficulty,
    MatchLabel, PairExample, Trial, PAIRS_FILE, PATIENTS_FILE, TRIALS_FILE,
};
use crate::evaluation::experiment::CorpusView;
use crate::evaluation::{
    emit_case_report, evaluate, per_trial_breakdown, predict_pairs, run_generalizability,
    standard_splits, LevelChoice, ModelRecipe, Semantics, SplitSpec,
};
use crate::ingestion::{
    build_pair_dataset, fetch_many, generate_synthetic_corpus, parse_eligibility, FixtureRegistry,
    LiveRegistryClient, PairingMode, RegistryClient, SyntheticCorpusConfig,
};
use crate::model::{load_checkpoint, save_checkpoint, MatchModel};
use crate::training::{train, CheckpointSink, Features, TrainingSet};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIFFICULTY_FILE: &str = "difficulty.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const AUGMENTATION_FILE: &str = "augmentation.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or invalid input; exit 1.
    Usage(String),
    /// Failure while running a valid command; exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "trialmatch",
    version,
    about = "Patient-trial matching with privacy-aware criteria augmentation"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch eligibility criteria for registry trials.
    FetchTrial(FetchArgs),
    /// Generate a synthetic corpus.
    Generate(GenerateArgs),
    /// Augment trial criteria.
    Augment(AugmentArgs),
    /// Train a matching model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on labeled pairs.
    Evaluate(EvaluateArgs),
    /// Run an experiment.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Render case reports comparing vanilla and augmented predictions.
    CaseReport(CaseReportArgs),
}

/// Corpus files, either from a directory or given one by one. Explicit
/// files win over the directory.
#[derive(Debug, Args, Clone)]
pub struct CorpusInput {
    /// Directory holding patients.jsonl, trials.jsonl and pairs.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

impl CorpusInput {
    fn resolve(&self, explicit: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        let path = match (explicit, &self.corpus) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(name),
            (None, None) => {
                // fall back to the directory of any explicit file
                let sibling = [&self.pairs, &self.trials, &self.patients]
                    .into_iter()
                    .flatten()
                    .next()
                    .and_then(|p| p.parent().map(Path::to_path_buf))
                    .ok_or_else(|| {
                        usage(format!(
                            "no --corpus directory and no --{} file",
                            name.trim_end_matches(".jsonl")
                        ))
                    })?;
                sibling.join(name)
            }
        };
        if !path.is_file() {
            return Err(usage(format!("input file not found: {}", path.display())));
        }
        Ok(path)
    }

    fn patients_path(&self) -> CliResult<PathBuf> {
        self.resolve(&self.patients, PATIENTS_FILE)
    }

    fn trials_path(&self) -> CliResult<PathBuf> {
        self.resolve(&self.trials, TRIALS_FILE)
    }

    fn pairs_path(&self) -> CliResult<PathBuf> {
        self.resolve(&self.pairs, PAIRS_FILE)
    }

    fn load(&self) -> CliResult<Corpus> {
        let ap = self.pairs_path()?;
        let (pp, tp) = (self.patients_path()?, self.trials_path()?);
        Ok(Corpus {
            patients: load_patients(&pp).map_err(usage)?,
            trials: load_trials(&tp).map_err(usage)?,
            pairs: load_pairs(&ap).map_err(usage)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Registry id; repeat for several trials.
    #[arg(long = "nct", required = true)]
    pub nct: Vec<String>,
    /// Replay recorded responses from this directory instead of the network.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Registry API base URL for live fetches.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Raw document(s) as JSON: an object for one id, an array for several.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the parsed trials as JSONL.
    #[arg(long)]
    pub trials_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_patients: Option<usize>,
    #[arg(long)]
    pub n_trials: Option<usize>,
    #[arg(long)]
    pub n_criteria: Option<usize>,
    #[arg(long)]
    pub target_pairs: Option<usize>,
    #[arg(long)]
    pub difficulty_mix: Option<f64>,
    /// all | enrolled
    #[arg(long)]
    pub pairing: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Llm,
    Swap,
    Context,
    Backtrans,
}

impl FromStr for MethodArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Self::Llm),
            "swap" | "swap_word" => Ok(Self::Swap),
            "context" | "context_word" => Ok(Self::Context),
            "backtrans" | "back_translation" => Ok(Self::Backtrans),
            other => Err(format!(
                "unknown method `{other}` (expected llm, swap, context or backtrans)"
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// llm | swap | context | backtrans
    #[arg(long, default_value = "llm")]
    pub method: MethodArg,
    /// Variants requested per criterion.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// enforce | audit_only
    #[arg(long, default_value = "enforce")]
    pub policy: PolicyMode,
    /// Output directory for the augmented corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// Audit log path (JSONL, appended); defaults to <out>/audit.jsonl.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// mock | openai
    #[arg(long, default_value = "mock")]
    pub client: String,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the live LLM API key.
    #[arg(long, default_value = "TRIALMATCH_LLM_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value = DEFAULT_PREFIX)]
    pub prefix: String,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Word swaps per variant for the swap method.
    #[arg(long, default_value_t = 1)]
    pub n_swaps: usize,
    /// Filler word for the context method; a built-in dictionary when absent.
    #[arg(long)]
    pub filler: Option<String>,
    /// Comma-separated pivot languages for back translation.
    #[arg(long, default_value = "de,fr,es")]
    pub pivots: String,
    /// phrase-table | identity | http
    #[arg(long, default_value = "phrase-table")]
    pub translator: String,
    #[arg(long)]
    pub translate_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: CorpusInput,
    /// TOML with [loss], [train] and [encoder] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint file, or a directory holding model.ckpt.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub input: CorpusInput,
    /// criteria | trial | both
    #[arg(long, default_value = "both")]
    pub level: LevelChoice,
    /// eligibility | strict
    #[arg(long, default_value = "eligibility")]
    pub semantics: Semantics,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write predicted pairs as JSONL.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    /// Also write the per-trial breakdown as JSON.
    #[arg(long)]
    pub breakdown_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Train per split on train trials and score held-out test trials.
    Generalizability(GeneralizabilityArgs),
}

#[derive(Debug, Args)]
pub struct GeneralizabilityArgs {
    /// Vanilla corpus directory (with difficulty.json unless --splits is given).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Augmented corpus directory for the paired comparison.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    /// TOML with [[split]] tables; the three standard cases when absent.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CaseReportArgs {
    /// Vanilla corpus directory (gold labels and criteria).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Augmented corpus directory, for the variants of each criterion.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    #[arg(long)]
    pub vanilla_predictions: PathBuf,
    #[arg(long)]
    pub augmented_predictions: PathBuf,
    #[arg(long)]
    pub patient: Option<String>,
    #[arg(long)]
    pub criterion: Option<String>,
    /// Keep only pairs whose prediction changed.
    #[arg(long)]
    pub changed_only: bool,
    #[arg(long, default_value_t = 20)]
    pub limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved settings and inputs of one run, enough to repeat it.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

fn write_manifest(dir: &Path, name: &str, manifest: &Manifest) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(runtime)?;
    fs::write(dir.join(name), text + "\n").map_err(runtime)
}

fn manifest(
    command: &str,
    argv: &[String],
    seed: Option<u64>,
    config: impl Serialize,
    outputs: &[&str],
) -> Manifest {
    Manifest {
        command: command.to_string(),
        argv: argv.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Manifest name for a single-file output: `<stem>.manifest.json` beside it.
fn file_manifest(out: &Path) -> (PathBuf, String) {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    (dir, format!("{stem}.manifest.json"))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_recipe(config: &Option<PathBuf>, seed: Option<u64>) -> CliResult<ModelRecipe> {
    let mut recipe: ModelRecipe = match config {
        Some(p) => read_toml(p)?,
        None => ModelRecipe::default(),
    };
    if let Some(s) = seed {
        recipe.train.seed = s;
    }
    recipe.loss.validate().map_err(usage)?;
    recipe.train.validate().map_err(usage)?;
    Ok(recipe)
}

fn write_error(path: &Path) -> impl Fn(CorpusError) -> CliError + '_ {
    move |e| runtime(format!("writing {}: {e}", path.display()))
}

fn run_fetch(args: &FetchArgs, argv: &[String]) -> CliResult<()> {
    let client: Box<dyn RegistryClient> = match &args.fixtures {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(usage(format!(
                    "fixture directory not found: {}",
                    dir.display()
                )));
            }
            Box::new(FixtureRegistry::new(dir))
        }
        None => {
            let mut c = LiveRegistryClient::new(args.max_retries).map_err(runtime)?;
            if let Some(url) = &args.base_url {
                c = c.with_base_url(url.clone());
            }
            Box::new(c)
        }
    };
    let mut docs = Vec::new();
    for result in fetch_many(&args.nct, client.as_ref(), 4) {
        docs.push(result.map_err(runtime)?);
    }
    if docs.len() == 1 {
        write_json(&args.out, &docs[0])?;
    } else {
        write_json(&args.out, &docs)?;
    }
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(path) = &args.trials_out {
        let trials: Vec<Trial> = docs
            .iter()
            .map(parse_eligibility)
            .collect::<Result<_, _>>()
            .map_err(runtime)?;
        ensure_parent(path)?;
        save_trials(path, &trials).map_err(write_error(path))?;
        outputs.push(path.display().to_string());
    }
    let (dir, name) = file_manifest(&args.out);
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(
        &dir,
        &name,
        &manifest("fetch-trial", argv, None, &args.nct, &refs),
    )
}

fn run_generate(args: &GenerateArgs, argv: &[String]) -> CliResult<()> {
    let mut cfg: SyntheticCorpusConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SyntheticCorpusConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(v) = args.n_patients {
        cfg.n_patients = v;
    }
    if let Some(v) = args.n_trials {
        cfg.n_trials = v;
    }
    if let Some(v) = args.n_criteria {
        cfg.n_criteria_total = v;
    }
    if let Some(v) = args.target_pairs {
        cfg.target_pairs = v;
    }
    if let Some(v) = args.difficulty_mix {
        cfg.difficulty_mix = v;
    }
    if let Some(v) = &args.pairing {
        cfg.pairing = match v.as_str() {
            "all" => PairingMode::All,
            "enrolled" => PairingMode::Enrolled,
            other => {
                return Err(usage(format!(
                    "unknown pairing `{other}` (expected all or enrolled)"
                )))
            }
        };
    }
    let synthetic = generate_synthetic_corpus(&cfg).map_err(usage)?;
    let pairs = build_pair_dataset(
        &synthetic.patients,
        &synthetic.trials,
        &synthetic.gold,
        cfg.seed,
    )
    .map_err(runtime)?;
    let corpus = Corpus {
        patients: synthetic.patients,
        trials: synthetic.trials,
        pairs,
    };
    save_corpus(&args.out, &corpus).map_err(write_error(&args.out))?;
    write_json(&args.out.join(DIFFICULTY_FILE), &synthetic.difficulty)?;
    info!(
        patients = corpus.patients.len(),
        trials = corpus.trials.len(),
        pairs = corpus.pairs.len(),
        "corpus written"
    );
    write_manifest(
        &args.out,
        MANIFEST_FILE,
        &manifest(
            "generate",
            argv,
            Some(cfg.seed),
            &cfg,
            &[PATIENTS_FILE, TRIALS_FILE, PAIRS_FILE, DIFFICULTY_FILE],
        ),
    )
}

fn parse_pivots(list: &str) -> CliResult<Vec<Pivot>> {
    list.split(',')
        .map(|p| Pivot::from_str(p.trim()).map_err(usage))
        .collect()
}

fn run_augment(args: &AugmentArgs, argv: &[String]) -> CliResult<()> {
    let trials_path = args.input.trials_path()?;
    let patients_path = args.input.patients_path()?;
    let trials = load_trials(&trials_path).map_err(usage)?;
    let patients = load_patients(&patients_path).map_err(usage)?;
    let pairs = match args.input.pairs_path() {
        Ok(p) => Some(load_pairs(&p).map_err(usage)?),
        Err(_) if args.input.pairs.is_none() => None,
        Err(e) => return Err(e),
    };
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    ensure_dir(&args.out)?;
    let audit_path = args
        .audit
        .clone()
        .unwrap_or_else(|| args.out.join(AUDIT_FILE));
    ensure_parent(&audit_path)?;
    let log = AuditLog::to_file(&audit_path)
        .map_err(|e| runtime(format!("{}: {e}", audit_path.display())))?;
    let policy = PrivacyPolicy::from_patients(&patients, args.policy);

    let llm: Option<Box<dyn LlmClient>> = match args.method {
        MethodArg::Llm => Some(match args.client.as_str() {
            "mock" => Box::new(MockLlm::new(args.seed, &args.prefix)),
            "openai" => {
                let endpoint = args
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| usage("--endpoint is required for --client openai"))?;
                let model = args
                    .model
                    .as_deref()
                    .ok_or_else(|| usage("--model is required for --client openai"))?;
                Box::new(
                    OpenAiCompatibleClient::from_env(endpoint, model, &args.api_key_env)
                        .map_err(usage)?,
                )
            }
            other => {
                return Err(usage(format!(
                    "unknown client `{other}` (expected mock or openai)"
                )))
            }
        }),
        _ => None,
    };
    let filler: Box<dyn MaskFiller> = match &args.filler {
        Some(w) => Box::new(ConstantFiller(w.clone())),
        None => Box::new(DictionaryFiller::default()),
    };
    let translator: Box<dyn Translator> = match args.translator.as_str() {
        "phrase-table" => Box::new(PhraseTableTranslator::default()),
        "identity" => Box::new(IdentityTranslator),
        "http" => {
            let ep = args
                .translate_endpoint
                .as_deref()
                .ok_or_else(|| usage("--translate-endpoint is required for --translator http"))?;
            Box::new(HttpTranslator::new(ep).map_err(usage)?)
        }
        other => return Err(usage(format!("unknown translator `{other}`"))),
    };
    let augmenter = match args.method {
        MethodArg::Llm => Augmenter::Llm {
            template: PromptTemplate {
                prefix_text: args.prefix.clone(),
                k_variants: args.k,
                ..PromptTemplate::default()
            },
            client: llm.as_deref().expect("built above"),
            options: LlmOptions::default(),
        },
        MethodArg::Swap => Augmenter::SwapWord {
            k: args.k,
            n_swaps: args.n_swaps,
            seed: args.seed,
        },
        MethodArg::Context => Augmenter::ContextWord {
            k: args.k,
            filler: filler.as_ref(),
            seed: args.seed,
        },
        MethodArg::Backtrans => Augmenter::BackTranslation {
            pivots: parse_pivots(&args.pivots)?,
            translator: translator.as_ref(),
        },
    };

    let (augmented, records, summary) =
        augment_trials(&trials, &augmenter, &policy, &log, args.parallelism.max(1))
            .map_err(runtime)?;
    info!(?summary, "augmentation done");
    save_trials(&args.out.join(TRIALS_FILE), &augmented).map_err(write_error(&args.out))?;
    save_patients(&args.out.join(PATIENTS_FILE), &patients).map_err(write_error(&args.out))?;
    write_jsonl(&args.out.join(AUGMENTATION_FILE), &records).map_err(write_error(&args.out))?;
    let mut outputs = vec![TRIALS_FILE, PATIENTS_FILE, AUGMENTATION_FILE];
    if let Some(pairs) = pairs {
        let propagated =
            propagate_labels(&pairs, &augmentation_map(&augmented)).map_err(runtime)?;
        save_pairs(&args.out.join(PAIRS_FILE), &propagated).map_err(write_error(&args.out))?;
        outputs.push(PAIRS_FILE);
    }
    let src_difficulty = trials_path.parent().map(|d| d.join(DIFFICULTY_FILE));
    if let Some(src) = src_difficulty.filter(|p| p.is_file()) {
        fs::copy(&src, args.out.join(DIFFICULTY_FILE)).map_err(runtime)?;
        outputs.push(DIFFICULTY_FILE);
    }
    #[derive(Serialize)]
    struct AugmentConfig<'a> {
        method: MethodArg,
        k: usize,
        policy: &'a str,
        client: &'a str,
        prefix: &'a str,
        n_swaps: usize,
        pivots: &'a str,
        translator: &'a str,
        audit: String,
        summary: String,
    }
    let cfg = AugmentConfig {
        method: args.method,
        k: args.k,
        policy: match args.policy {
            PolicyMode::Enforce => "enforce",
            PolicyMode::AuditOnly => "audit_only",
        },
        client: &args.client,
        prefix: &args.prefix,
        n_swaps: args.n_swaps,
        pivots: &args.pivots,
        translator: &args.translator,
        audit: audit_path.display().to_string(),
        summary: format!("{summary:?}"),
    };
    write_manifest(
        &args.out,
        MANIFEST_FILE,
        &manifest("augment", argv, Some(args.seed), &cfg, &outputs),
    )
}

fn check_corpus(corpus: &Corpus) -> CliResult<()> {
    let report = validate_corpus(&corpus.patients, &corpus.trials, &corpus.pairs);
    if report.is_empty() {
        Ok(())
    } else {
        Err(usage(format!("invalid corpus: {report}")))
    }
}

fn run_train(args: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let recipe = load_recipe(&args.config, args.seed)?;
    let corpus = args.input.load()?;
    check_corpus(&corpus)?;
    let encoder = recipe.encoder.build_encoder().map_err(usage)?;
    let set = TrainingSet::new(
        encoder.as_ref(),
        &corpus.patients,
        &corpus.trials,
        &corpus.pairs,
    )
    .map_err(usage)?;
    let mut model = recipe.fresh_model().map_err(usage)?;
    ensure_dir(&args.out)?;
    let backend = encoder.backend_id();
    let sink = CheckpointSink {
        dir: &args.out,
        backend: &backend,
    };
    let history =
        train(&mut model, &set, &recipe.loss, &recipe.train, Some(sink)).map_err(runtime)?;
    save_checkpoint(&args.out.join(CHECKPOINT_FILE), &model, &backend).map_err(runtime)?;
    history.write(&args.out).map_err(runtime)?;
    write_manifest(
        &args.out,
        MANIFEST_FILE,
        &manifest(
            "train",
            argv,
            Some(recipe.train.seed),
            &recipe,
            &[
                CHECKPOINT_FILE,
                crate::training::HISTORY_FILE,
                crate::training::TIMING_FILE,
            ],
        ),
    )
}

fn load_model(path: &Path) -> CliResult<(MatchModel, String)> {
    let file = if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    };
    if !file.is_file() {
        return Err(usage(format!("checkpoint not found: {}", file.display())));
    }
    load_checkpoint(&file, None).map_err(usage)
}

/// Pairs on original criteria only; others are dropped with a warning.
fn original_pairs(pairs: &[PairExample], trials: &[Trial]) -> CliResult<Vec<PairExample>> {
    let index = criterion_index(trials);
    let mut out = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for p in pairs {
        let c = index.get(p.criterion_id.as_str()).ok_or_else(|| {
            usage(format!(
                "pair references unknown criterion `{}`",
                p.criterion_id
            ))
        })?;
        if c.provenance.is_original() {
            out.push(p.clone());
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        warn!(dropped, "pairs on augmented criteria are not evaluated");
    }
    Ok(out)
}

fn read_difficulty(dir: &Path) -> CliResult<BTreeMap<String, Difficulty>> {
    let path = dir.join(DIFFICULTY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run_evaluate(args: &EvaluateArgs, argv: &[String]) -> CliResult<()> {
    let (model, backend) = load_model(&args.ckpt)?;
    let corpus = args.input.load()?;
    check_corpus(&corpus)?;
    let encoder = model.config.build_encoder().map_err(usage)?;
    if encoder.backend_id() != backend {
        warn!(checkpoint = %backend, current = %encoder.backend_id(), "text encoder backend differs from checkpoint");
    }
    let gold = original_pairs(&corpus.pairs, &corpus.trials)?;
    let features =
        Features::build(encoder.as_ref(), &corpus.patients, &corpus.trials).map_err(usage)?;
    let predictions = predict_pairs(&model, &features, &gold).map_err(runtime)?;
    let rows = evaluate(
        &predictions,
        &gold,
        &corpus.trials,
        args.level,
        args.semantics,
    )
    .map_err(runtime)?;
    write_json(&args.out, &rows)?;
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(p) = &args.predictions_out {
        ensure_parent(p)?;
        save_pairs(p, &predictions).map_err(write_error(p))?;
        outputs.push(p.display().to_string());
    }
    if let Some(p) = &args.breakdown_out {
        let difficulty = args
            .input
            .trials_path()
            .ok()
            .and_then(|t| t.parent().map(Path::to_path_buf))
            .and_then(|d| read_difficulty(&d).ok())
            .unwrap_or_default();
        let breakdown = per_trial_breakdown(&predictions, &gold, &corpus.trials, &difficulty)
            .map_err(runtime)?;
        write_json(p, &breakdown)?;
        outputs.push(p.display().to_string());
    }
    #[derive(Serialize)]
    struct EvalConfig {
        level: LevelChoice,
        semantics: Semantics,
        backend: String,
    }
    let (dir, name) = file_manifest(&args.out);
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(
        &dir,
        &name,
        &manifest(
            "evaluate",
            argv,
            None,
            EvalConfig {
                level: args.level,
                semantics: args.semantics,
                backend,
            },
            &refs,
        ),
    )
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    split: Vec<SplitSpec>,
}

fn load_dir_corpus(dir: &Path) -> CliResult<Corpus> {
    CorpusInput {
        corpus: Some(dir.to_path_buf()),
        patients: None,
        trials: None,
        pairs: None,
    }
    .load()
}

fn run_generalizability_cmd(args: &GeneralizabilityArgs, argv: &[String]) -> CliResult<()> {
    let recipe = load_recipe(&args.config, args.seed)?;
    let vanilla = load_dir_corpus(&args.corpus)?;
    check_corpus(&vanilla)?;
    let augmented = match &args.augmented {
        Some(d) => {
            let c = load_dir_corpus(d)?;
            check_corpus(&c)?;
            Some(c)
        }
        None => None,
    };
    let splits = match &args.splits {
        Some(p) => read_toml::<SplitsFile>(p)?.split,
        None => standard_splits(&read_difficulty(&args.corpus)?),
    };
    if splits.is_empty() {
        return Err(usage("no splits to run"));
    }
    for s in &splits {
        s.validate().map_err(usage)?;
    }
    let encoder = recipe.encoder.build_encoder().map_err(usage)?;
    let report = run_generalizability(
        encoder.as_ref(),
        &vanilla.patients,
        CorpusView {
            trials: &vanilla.trials,
            pairs: &vanilla.pairs,
        },
        augmented.as_ref().map(|c| CorpusView {
            trials: &c.trials,
            pairs: &c.pairs,
        }),
        &recipe,
        &splits,
    )
    .map_err(runtime)?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join("experiment.json"), &report)?;
    let pred_dir = args.out.join("predictions");
    ensure_dir(&pred_dir)?;
    let mut outputs = vec!["experiment.json".to_string()];
    for row in &report.rows {
        let v = pred_dir.join(format!("{}.vanilla.jsonl", row.name));
        save_pairs(&v, &row.vanilla_predictions).map_err(write_error(&v))?;
        outputs.push(format!("predictions/{}.vanilla.jsonl", row.name));
        if let Some(ap) = &row.augmented_predictions {
            let a = pred_dir.join(format!("{}.augmented.jsonl", row.name));
            save_pairs(&a, ap).map_err(write_error(&a))?;
            outputs.push(format!("predictions/{}.augmented.jsonl", row.name));
        }
    }
    #[derive(Serialize)]
    struct ExperimentConfig<'a> {
        recipe: &'a ModelRecipe,
        splits: &'a [SplitSpec],
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(
        &args.out,
        MANIFEST_FILE,
        &manifest(
            "experiment generalizability",
            argv,
            Some(recipe.train.seed),
            ExperimentConfig {
                recipe: &recipe,
                splits: &splits,
            },
            &refs,
        ),
    )
}

fn run_case_report(args: &CaseReportArgs, argv: &[String]) -> CliResult<()> {
    let corpus = load_dir_corpus(&args.corpus)?;
    let index = criterion_index(&corpus.trials);
    let load = |p: &PathBuf| -> CliResult<Vec<PairExample>> {
        if !p.is_file() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
        load_pairs(p).map_err(usage)
    };
    let vanilla = load(&args.vanilla_predictions)?;
    let augmented = load(&args.augmented_predictions)?;
    let variants: BTreeMap<String, Vec<String>> = match &args.augmented {
        Some(dir) => {
            let path = dir.join(TRIALS_FILE);
            if !path.is_file() {
                return Err(usage(format!("input file not found: {}", path.display())));
            }
            let aug_trials = load_trials(&path).map_err(usage)?;
            let aug_index = criterion_index(&aug_trials);
            augmentation_map(&aug_trials)
                .into_iter()
                .map(|(src, ids)| {
                    (
                        src,
                        ids.iter()
                            .map(|id| aug_index[id.as_str()].text.clone())
                            .collect(),
                    )
                })
                .collect()
        }
        None => BTreeMap::new(),
    };
    type Key = (String, String, Option<String>);
    let key = |p: &PairExample| -> Key {
        (
            p.patient_id.clone(),
            p.criterion_id.clone(),
            p.origin_trial_id.clone(),
        )
    };
    let vmap: BTreeMap<Key, MatchLabel> = vanilla.iter().map(|p| (key(p), p.label)).collect();
    let amap: BTreeMap<Key, MatchLabel> = augmented.iter().map(|p| (key(p), p.label)).collect();
    let mut reports = Vec::new();
    for gold in &corpus.pairs {
        if reports.len() >= args.limit {
            break;
        }
        if args.patient.as_ref().is_some_and(|p| *p != gold.patient_id)
            || args
                .criterion
                .as_ref()
                .is_some_and(|c| *c != gold.criterion_id)
        {
            continue;
        }
        let k = key(gold);
        let (Some(v), Some(a)) = (vmap.get(&k), amap.get(&k)) else {
            continue;
        };
        if args.changed_only && v == a {
            continue;
        }
        let Some(c) = index.get(gold.criterion_id.as_str()) else {
            continue;
        };
        let vars = variants.get(&gold.criterion_id).map(Vec::as_slice);
        reports.push(emit_case_report(gold, c, vars, *v, *a, gold.label));
    }
    for r in &reports {
        println!("{}", r.render_text());
    }
    write_json(&args.out, &reports)?;
    let (dir, name) = file_manifest(&args.out);
    let out = args.out.display().to_string();
    write_manifest(
        &dir,
        &name,
        &manifest("case-report", argv, None, serde_json::Value::Null, &[&out]),
    )
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> CliResult<()> {
    match &cli.command {
        Command::FetchTrial(a) => run_fetch(a, argv),
        Command::Generate(a) => run_generate(a, argv),
        Command::Augment(a) => run_augment(a, argv),
        Command::Train(a) => run_train(a, argv),
        Command::Evaluate(a) => run_evaluate(a, argv),
        Command::Experiment(ExperimentCommand::Generalizability(a)) => {
            run_generalizability_cmd(a, argv)
        }
        Command::CaseReport(a) => run_case_report(a, argv),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match dispatch(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
