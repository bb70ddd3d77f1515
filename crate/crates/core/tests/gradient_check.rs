use trialmatch::ingestion::{build_pair_dataset, generate_synthetic_corpus, SyntheticCorpusConfig};
use trialmatch::model::{EncoderConfig, HashingEncoder, MatchModel, MemoryReadout};
use trialmatch::objective::{ContrastiveForm, ContrastiveScope, LossConfig};
use trialmatch::training::{batch_loss_grad, Example, TrainingSet};

fn toy_set() -> TrainingSet {
    let cfg = SyntheticCorpusConfig {
        n_patients: 6,
        n_trials: 2,
        n_criteria_total: 8,
        target_pairs: 72,
        seed: 21,
        ..Default::default()
    };
    let c = generate_synthetic_corpus(&cfg).unwrap();
    let pairs = build_pair_dataset(&c.patients, &c.trials, &c.gold, 21).unwrap();
    TrainingSet::new(
        &HashingEncoder::new(8, 2, 0),
        &c.patients,
        &c.trials,
        &pairs,
    )
    .unwrap()
}

fn loss_at(model: &MatchModel, set: &TrainingSet, batch: &[Example], loss: &LossConfig) -> f64 {
    let mut scratch = vec![0.0; model.n_params()];
    batch_loss_grad(model, &set.features, batch, loss, &mut scratch)
        .unwrap()
        .total
}

/// Relative error between analytic and central-difference gradients over
/// all parameters of one micro-batch.
fn relative_error(
    model: &MatchModel,
    set: &TrainingSet,
    batch: &[Example],
    loss: &LossConfig,
) -> f64 {
    let mut analytic = vec![0.0; model.n_params()];
    batch_loss_grad(model, &set.features, batch, loss, &mut analytic).unwrap();
    let h = 1e-6;
    let mut probe = model.clone();
    let (mut diff, mut scale) = (0.0, 0.0);
    for i in 0..model.n_params() {
        let base = probe.params[i];
        probe.params[i] = base + h;
        let up = loss_at(&probe, set, batch, loss);
        probe.params[i] = base - h;
        let down = loss_at(&probe, set, batch, loss);
        probe.params[i] = base;
        let numeric = (up - down) / (2.0 * h);
        diff += (analytic[i] - numeric).powi(2);
        scale += (analytic[i].abs() + numeric.abs()).powi(2);
    }
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale.sqrt()
    }
}

fn check(readout: MemoryReadout, literal: bool, form: ContrastiveForm, scope: ContrastiveScope) {
    let set = toy_set();
    let config = EncoderConfig {
        embedding_dim: 8,
        highway_channels: 4,
        highway_layers: 2,
        memory_readout: readout,
        literal_highway_formula: literal,
        hashing_buckets: 2,
        ..Default::default()
    };
    let model = MatchModel::new(config, 13).unwrap();
    let loss = LossConfig {
        contrastive_form: form,
        contrastive_scope: scope,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut with_groups = 0;
    // 20 micro-batches of 5 consecutive examples, so most share a group
    for b in 0..20 {
        let start = (b * 5) % (set.examples.len() - 5);
        let batch: Vec<Example> = set.examples[start..start + 5].to_vec();
        worst = worst.max(relative_error(&model, &set, &batch, &loss));
        let mut scratch = vec![0.0; model.n_params()];
        let parts = batch_loss_grad(&model, &set.features, &batch, &loss, &mut scratch).unwrap();
        if parts.n_groups > 0 && parts.con > 0.0 {
            with_groups += 1;
        }
    }
    assert!(
        with_groups >= 1,
        "similarity term active in only {with_groups} batches"
    );
    assert!(
        worst < 1e-3,
        "{readout:?} literal={literal} {form:?} {scope:?}: relative error {worst}"
    );
}

#[test]
fn gradients_product_form_canonical_highway() {
    check(
        MemoryReadout::QueryAttention,
        false,
        ContrastiveForm::Product,
        ContrastiveScope::GoldConditioned,
    );
}

#[test]
fn gradients_sum_form_canonical_highway() {
    check(
        MemoryReadout::QueryAttention,
        false,
        ContrastiveForm::SumLog,
        ContrastiveScope::GoldConditioned,
    );
}

#[test]
fn gradients_product_form_literal_highway() {
    check(
        MemoryReadout::QueryAttention,
        true,
        ContrastiveForm::Product,
        ContrastiveScope::Unconditional,
    );
}

#[test]
fn gradients_sum_form_literal_highway() {
    check(
        MemoryReadout::QueryAttention,
        true,
        ContrastiveForm::SumLog,
        ContrastiveScope::Unconditional,
    );
}

#[test]
fn gradients_self_attention_pool() {
    check(
        MemoryReadout::SelfAttentionPool,
        false,
        ContrastiveForm::Product,
        ContrastiveScope::GoldConditioned,
    );
}

#[test]
fn gradients_mean_pool() {
    check(
        MemoryReadout::MeanPool,
        false,
        ContrastiveForm::SumLog,
        ContrastiveScope::GoldConditioned,
    );
}
