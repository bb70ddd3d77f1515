//! Feature precomputation, group-aware batching and the Adam training loop.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::data::{
    write_jsonl, CorpusError, CriterionKind, MatchLabel, PairExample, PatientRecord, Trial,
};
use crate::model::{
    cosine_sim, dot, norm, save_checkpoint, MatchModel, ModelError, SparseVec, TextEncoder,
};
use crate::objective::{
    classification_grad, classification_loss, contrastive_grad, contrastive_loss, total_loss,
    ContrastiveScope, LossConfig, LossError,
};
use crate::seed::rng_for;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("pair references unknown {what} `{id}`")]
    Dangling { what: &'static str, id: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (first pair {first_pair})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        first_pair: String,
    },
    #[error("train config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] CorpusError),
}

/// Encoder outputs that do not depend on model parameters.
pub struct Features {
    criterion_index: HashMap<String, usize>,
    criterion_tokens: Vec<Vec<SparseVec>>,
    criterion_kind: Vec<CriterionKind>,
    criterion_ids: Vec<String>,
    patient_index: HashMap<String, usize>,
    patient_slots: Vec<Option<Vec<f64>>>,
    patient_ids: Vec<String>,
}

impl Features {
    pub fn build(
        encoder: &dyn TextEncoder,
        patients: &[PatientRecord],
        trials: &[Trial],
    ) -> Result<Self, ModelError> {
        let mut f = Features {
            criterion_index: HashMap::new(),
            criterion_tokens: Vec::new(),
            criterion_kind: Vec::new(),
            criterion_ids: Vec::new(),
            patient_index: HashMap::new(),
            patient_slots: Vec::new(),
            patient_ids: Vec::new(),
        };
        for c in trials.iter().flat_map(Trial::criteria) {
            f.criterion_index
                .insert(c.criterion_id.clone(), f.criterion_tokens.len());
            f.criterion_tokens.push(encoder.token_vectors(&c.text)?);
            f.criterion_kind.push(c.kind);
            f.criterion_ids.push(c.criterion_id.clone());
        }
        for p in patients {
            f.patient_index
                .insert(p.patient_id.clone(), f.patient_slots.len());
            let slots = if p.n_entries() == 0 {
                None
            } else {
                let mut s = Vec::with_capacity(p.n_entries() * encoder.dim());
                for e in p.entries() {
                    s.extend(encoder.encode_text(e)?);
                }
                Some(s)
            };
            f.patient_slots.push(slots);
            f.patient_ids.push(p.patient_id.clone());
        }
        Ok(f)
    }

    pub fn criterion(&self, id: &str) -> Option<usize> {
        self.criterion_index.get(id).copied()
    }

    pub fn patient(&self, id: &str) -> Option<usize> {
        self.patient_index.get(id).copied()
    }

    /// Class probabilities for each (patient, criterion) index pair; `None`
    /// where the patient record is empty. Criteria are encoded once.
    pub fn predict(&self, model: &MatchModel, pairs: &[(usize, usize)]) -> Vec<Option<[f64; 3]>> {
        let mut needed: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        needed.sort_unstable();
        needed.dedup();
        let x_c: HashMap<usize, Vec<f64>> = needed
            .into_iter()
            .map(|c| {
                (
                    c,
                    model.criterion_forward(self.criterion_tokens[c].clone()).0,
                )
            })
            .collect();
        let threads = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(8);
        let chunk = pairs.len().div_ceil(threads).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .map(|part| {
                    let x_c = &x_c;
                    s.spawn(move || {
                        part.iter()
                            .map(|&(p, c)| {
                                let slots = self.patient_slots[p].as_ref()?;
                                let xc = &x_c[&c];
                                let (xp, _) = model.readout(slots, Some(xc));
                                Some(model.head_forward(&xp, xc).probs)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub patient: usize,
    pub criterion: usize,
    pub label: MatchLabel,
    pub kind: CriterionKind,
    pub group: usize,
}

/// Features plus indexed examples grouped by (patient, generating trial).
pub struct TrainingSet {
    pub features: Features,
    pub examples: Vec<Example>,
    /// Example indices per group, groups in first-seen order.
    pub groups: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn new(
        encoder: &dyn TextEncoder,
        patients: &[PatientRecord],
        trials: &[Trial],
        pairs: &[PairExample],
    ) -> Result<Self, TrainError> {
        let features = Features::build(encoder, patients, trials)?;
        Self::from_features(features, trials, pairs)
    }

    pub fn from_features(
        features: Features,
        trials: &[Trial],
        pairs: &[PairExample],
    ) -> Result<Self, TrainError> {
        let crit_trial: HashMap<&str, &str> = trials
            .iter()
            .flat_map(Trial::criteria)
            .map(|c| (c.criterion_id.as_str(), c.trial_id.as_str()))
            .collect();
        let mut group_of: HashMap<(usize, &str), usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut examples = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let patient =
                features
                    .patient(&pair.patient_id)
                    .ok_or_else(|| TrainError::Dangling {
                        what: "patient",
                        id: pair.patient_id.clone(),
                    })?;
            let criterion =
                features
                    .criterion(&pair.criterion_id)
                    .ok_or_else(|| TrainError::Dangling {
                        what: "criterion",
                        id: pair.criterion_id.clone(),
                    })?;
            if features.patient_slots[patient].is_none() {
                return Err(ModelError::EmptyPatient(pair.patient_id.clone()).into());
            }
            let trial = pair
                .origin_trial_id
                .as_deref()
                .unwrap_or(crit_trial[pair.criterion_id.as_str()]);
            let next = groups.len();
            let group = *group_of.entry((patient, trial)).or_insert(next);
            if group == next {
                groups.push(Vec::new());
            }
            groups[group].push(examples.len());
            examples.push(Example {
                patient,
                criterion,
                label: pair.label,
                kind: features.criterion_kind[criterion],
                group,
            });
        }
        Ok(Self {
            features,
            examples,
            groups,
        })
    }

    /// Shuffle group order, split oversized groups, and pack whole groups
    /// into batches of at most `batch_size` examples.
    pub fn batches<R: rand::Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(rng);
        let mut batches: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for g in order {
            for piece in self.groups[g].chunks(batch_size) {
                if current.len() + piece.len() > batch_size {
                    batches.push(std::mem::take(&mut current));
                }
                current.extend_from_slice(piece);
            }
        }
        if !current.is_empty() {
            batches.push(current);
        }
        batches
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub cla: f64,
    pub con: f64,
    pub n_groups: usize,
}

fn one_hot(label: MatchLabel) -> [f64; 3] {
    let mut y = [0.0; 3];
    y[label.index()] = 1.0;
    y
}

/// Which side of the similarity term an example falls on, if any.
fn contrastive_role(ex: &Example, scope: ContrastiveScope) -> Option<CriterionKind> {
    match (scope, ex.label, ex.kind) {
        (_, MatchLabel::Unknown, _) => None,
        (ContrastiveScope::Unconditional, _, kind) => Some(kind),
        (ContrastiveScope::GoldConditioned, MatchLabel::Match, CriterionKind::Inclusion) => {
            Some(CriterionKind::Inclusion)
        }
        (ContrastiveScope::GoldConditioned, MatchLabel::Mismatch, CriterionKind::Exclusion) => {
            Some(CriterionKind::Exclusion)
        }
        _ => None,
    }
}

/// Loss of one batch; gradients are added into `grad`.
pub fn batch_loss_grad(
    model: &MatchModel,
    features: &Features,
    batch: &[Example],
    loss: &LossConfig,
    grad: &mut [f64],
) -> Result<LossParts, TrainError> {
    let e = model.layout().e;
    let n = batch.len();
    if n == 0 {
        return Ok(LossParts::default());
    }

    // criterion encodings, once per distinct criterion
    let mut slot_of: HashMap<usize, usize> = HashMap::new();
    let mut encoded = Vec::new();
    for ex in batch {
        slot_of.entry(ex.criterion).or_insert_with(|| {
            encoded.push(model.criterion_forward(features.criterion_tokens[ex.criterion].clone()));
            encoded.len() - 1
        });
    }
    let mut dxc = vec![vec![0.0; e]; encoded.len()];

    struct Fwd {
        xp: Vec<f64>,
        readout: crate::model::ReadoutCache,
        head: crate::model::network::HeadCache,
        sim: f64,
    }
    let mut fwd = Vec::with_capacity(n);
    let mut l_cla = 0.0;
    for ex in batch {
        let slots = features.patient_slots[ex.patient]
            .as_ref()
            .expect("checked at construction");
        let xc = &encoded[slot_of[&ex.criterion]].0;
        let (xp, readout) = model.readout(slots, Some(xc));
        let head = model.head_forward(&xp, xc);
        l_cla += classification_loss(head.probs, one_hot(ex.label))?;
        let sim = cosine_sim(&xp, xc)?;
        fwd.push(Fwd {
            xp,
            readout,
            head,
            sim,
        });
    }
    l_cla /= n as f64;

    // per-group similarity terms
    let mut members: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    let mut group_pos: HashMap<usize, usize> = HashMap::new();
    for (k, ex) in batch.iter().enumerate() {
        let Some(role) = contrastive_role(ex, loss.contrastive_scope) else {
            continue;
        };
        let pos = *group_pos.entry(ex.group).or_insert_with(|| {
            members.push((ex.group, Vec::new(), Vec::new()));
            members.len() - 1
        });
        match role {
            CriterionKind::Inclusion => members[pos].1.push(k),
            CriterionKind::Exclusion => members[pos].2.push(k),
        }
    }
    let n_groups = members.len();
    let mut l_con = 0.0;
    let mut dsim = vec![0.0; n];
    for (_, incl, excl) in &members {
        let si: Vec<f64> = incl.iter().map(|&k| fwd[k].sim).collect();
        let se: Vec<f64> = excl.iter().map(|&k| fwd[k].sim).collect();
        l_con += contrastive_loss(&si, &se, loss.epsilon, loss.contrastive_form)?;
        let (gi, ge) = contrastive_grad(&si, &se, loss.epsilon, loss.contrastive_form);
        let scale = (1.0 - loss.alpha) / n_groups as f64;
        for (&k, g) in incl.iter().zip(gi).chain(excl.iter().zip(ge)) {
            dsim[k] += scale * g;
        }
    }
    if n_groups > 0 {
        l_con /= n_groups as f64;
    }

    // backward, pair by pair
    let cla_scale = loss.alpha / n as f64;
    for (k, ex) in batch.iter().enumerate() {
        let f = &fwd[k];
        let slot = slot_of[&ex.criterion];
        let xc = &encoded[slot].0;
        let mut dp = vec![0.0; e];
        let mut dc = vec![0.0; e];
        let g = classification_grad(f.head.probs, one_hot(ex.label));
        let dprobs = [g[0] * cla_scale, g[1] * cla_scale, g[2] * cla_scale];
        model.head_backward(&f.head, &f.xp, xc, dprobs, &mut dp, &mut dc, grad);
        if dsim[k] != 0.0 {
            let (np, nc) = (norm(&f.xp), norm(xc));
            let s = dot(&f.xp, xc) / (np * nc);
            for i in 0..e {
                dp[i] += dsim[k] * (xc[i] / (np * nc) - s * f.xp[i] / (np * np));
                dc[i] += dsim[k] * (f.xp[i] / (np * nc) - s * xc[i] / (nc * nc));
            }
        }
        let slots = features.patient_slots[ex.patient]
            .as_ref()
            .expect("checked at construction");
        model.readout_backward(slots, &f.readout, &dp, &mut dc, grad);
        for (a, b) in dxc[slot].iter_mut().zip(&dc) {
            *a += b;
        }
    }
    for ((_, cache), d) in encoded.iter().zip(&dxc) {
        model.criterion_backward(cache, d, grad);
    }

    Ok(LossParts {
        total: total_loss(l_cla, l_con, loss.alpha),
        cla: l_cla,
        con: l_con,
        n_groups,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    AdamStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 128,
            learning_rate: 1e-4,
            optimizer: Optimizer::AdamStyle,
            seed: 7,
            checkpoint_every: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config(
                "beta1 and beta2 must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_l_cla: f64,
    pub mean_l_con: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRecord {
    epoch: usize,
    wall_time_secs: f64,
}

/// Per-epoch means; wall-clock time is kept apart so that the loss history
/// of a seeded run is reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: Vec<f64>,
}

impl TrainHistory {
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        write_jsonl(&dir.join(HISTORY_FILE), &self.epochs)?;
        let timing: Vec<TimingRecord> = self
            .epochs
            .iter()
            .zip(&self.wall_time_secs)
            .map(|(e, t)| TimingRecord {
                epoch: e.epoch,
                wall_time_secs: *t,
            })
            .collect();
        write_jsonl(&dir.join(TIMING_FILE), &timing)
    }
}

/// Where and how to write periodic checkpoints.
pub struct CheckpointSink<'a> {
    pub dir: &'a Path,
    pub backend: &'a str,
}

pub fn train(
    model: &mut MatchModel,
    set: &TrainingSet,
    loss: &LossConfig,
    cfg: &TrainConfig,
    checkpoints: Option<CheckpointSink<'_>>,
) -> Result<TrainHistory, TrainError> {
    loss.validate()?;
    cfg.validate()?;
    if set.examples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut history = TrainHistory::default();
    let mut adam = Adam::new(model.n_params(), cfg);
    let mut rng = rng_for(cfg.seed, "shuffle");
    let mut grad = vec![0.0; model.n_params()];
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches = set.batches(cfg.batch_size, &mut rng);
        let (mut sum, mut sum_cla, mut sum_con) = (0.0, 0.0, 0.0);
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<Example> = idx.iter().map(|&i| set.examples[i]).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let parts = batch_loss_grad(model, &set.features, &batch, loss, &mut grad)?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let ex = batch[0];
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    first_pair: format!(
                        "{}/{}",
                        set.features.patient_ids[ex.patient],
                        set.features.criterion_ids[ex.criterion]
                    ),
                });
            }
            adam.step(&mut model.params, &grad);
            sum += parts.total;
            sum_cla += parts.cla;
            sum_con += parts.con;
        }
        let nb = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            mean_loss: sum / nb,
            mean_l_cla: sum_cla / nb,
            mean_l_con: sum_con / nb,
        };
        info!(
            epoch,
            loss = record.mean_loss,
            l_cla = record.mean_l_cla,
            l_con = record.mean_l_con,
            "epoch done"
        );
        history.epochs.push(record);
        history.wall_time_secs.push(started.elapsed().as_secs_f64());
        if let Some(sink) = &checkpoints {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                save_checkpoint(
                    &sink.dir.join(format!("epoch-{epoch:03}.ckpt")),
                    model,
                    sink.backend,
                )?;
            }
        }
    }
    Ok(history)
}
