use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    extract_phrases, make_labels, margin_loss_logits, sample_batch, Group, LossConfig, Phrase,
    SamplerConfig, SymbolInventory, TrainingCorpus,
};
use crate::encoders::{ModelConfig, ModelGraph, ParameterStore, Phase};
use crate::nn::{Adam, Real, Segments, Tensor, ValueId};
use crate::{Error, Result};

/// Optimization schedule and validation setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub learning_rate: f64,
    /// Hard cap on epochs, on top of the stagnation rule.
    pub max_epochs: usize,
    /// Halve the learning rate each time this many epochs pass without a
    /// new best validation loss.
    pub halve_after: usize,
    /// Stop after this many epochs without a new best.
    pub stop_after: usize,
    /// Smallest decrease that counts as a new best.
    pub min_improvement: f64,
    pub validation_fraction: f64,
    /// Fixed phrase groups scored for validation after every epoch.
    pub validation_groups: usize,
    /// Longest training n-gram.
    pub max_phrase_order: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            max_epochs: 500,
            halve_after: 4,
            stop_after: 10,
            min_improvement: 1e-5,
            validation_fraction: 0.1,
            validation_groups: 256,
            max_phrase_order: 3,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
        }
        if self.max_phrase_order == 0 || self.halve_after == 0 || self.stop_after == 0 {
            return Err(Error::Config("phrase order and patience values must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that shapes a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub schedule: Schedule,
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per phrase over the epoch's steps.
    pub train_loss: f64,
    /// Mean loss per phrase over the fixed validation groups.
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochLog {
    pub fn tsv_line(&self) -> String {
        format!("{}\t{}\t{}\t{}\n", self.epoch, self.train_loss, self.val_loss, self.lr)
    }
}

/// State to continue from: parameters, optimizer and completed epochs.
pub struct Resume {
    pub params: ParameterStore,
    pub adam: Adam<f32>,
    pub epochs_done: usize,
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: ParameterStore,
    /// Optimizer state after the last epoch.
    pub adam: Adam<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Phrases, their spellings, and the train/validation split of one run.
pub struct TrainingData<'c> {
    pub corpus: &'c TrainingCorpus,
    pub phrases: Vec<Phrase>,
    pub symbols: Vec<Vec<usize>>,
    pub train_utts: Vec<usize>,
    pub val_utts: Vec<usize>,
    pub train_tokens: Vec<(usize, usize)>,
    pub val_tokens: Vec<(usize, usize)>,
}

impl<'c> TrainingData<'c> {
    /// Splits utterances (seeded) and tokenizes every phrase.
    pub fn new(
        corpus: &'c TrainingCorpus,
        inventory: &SymbolInventory,
        schedule: &Schedule,
        seed: u64,
    ) -> Result<Self> {
        if corpus.len() < 2 {
            return Err(Error::Config("training needs at least two utterances".into()));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream(seed, 1));
        let n_val = ((corpus.len() as f64 * schedule.validation_fraction).round() as usize)
            .clamp(1, corpus.len() - 1);
        let mut val_utts = order[..n_val].to_vec();
        let mut train_utts = order[n_val..].to_vec();
        val_utts.sort_unstable();
        train_utts.sort_unstable();
        let phrases = extract_phrases(corpus, schedule.max_phrase_order);
        let symbols = phrases
            .iter()
            .map(|p| inventory.encode(&p.text()))
            .collect::<Result<Vec<_>>>()?;
        let mut is_val = vec![false; corpus.len()];
        val_utts.iter().for_each(|&u| is_val[u] = true);
        let (mut train_tokens, mut val_tokens) = (Vec::new(), Vec::new());
        for (p, ph) in phrases.iter().enumerate() {
            for (o, span) in ph.occurrences.iter().enumerate() {
                if is_val[span.utterance] {
                    val_tokens.push((p, o));
                } else {
                    train_tokens.push((p, o));
                }
            }
        }
        if train_tokens.is_empty() {
            return Err(Error::Empty("aligned words in the training split"));
        }
        Ok(Self {
            corpus,
            phrases,
            symbols,
            train_utts,
            val_utts,
            train_tokens,
            val_tokens,
        })
    }

    /// Steps in one epoch: one pass over the phrase tokens in batches.
    pub fn steps_per_epoch(&self, sampler: &SamplerConfig) -> usize {
        self.train_tokens.len().div_ceil(sampler.batch_phrases)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Graph, loss node and summed loss value for one batch of groups.
pub struct BatchForward<'p, T: Real> {
    pub graph: ModelGraph<'p, T>,
    pub loss: ValueId,
    pub value: f64,
}

/// Builds the summed per-pair loss of `groups` on a fresh tape.
pub fn batch_forward<'p, T: Real>(
    params: &'p ParameterStore<T>,
    data: &TrainingData,
    groups: &[Group],
    loss_cfg: &LossConfig,
    phase: &mut Phase,
) -> Result<BatchForward<'p, T>> {
    let cfg = params.config();
    let mut graph = ModelGraph::new(params);
    let queries: Vec<&[usize]> = groups.iter().map(|g| data.symbols[g.phrase].as_slice()).collect();
    let q = graph.queries(&queries, phase)?;
    let mut docs: Vec<(&str, &Tensor<f32>)> = Vec::new();
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    for (qi, g) in groups.iter().enumerate() {
        for &u in &g.utterances {
            let utt = &data.corpus.utterances[u];
            pairs.push((qi, docs.len()));
            docs.push((utt.id.as_str(), &utt.features));
            labels.extend(make_labels(
                &data.phrases[g.phrase].words,
                &utt.words,
                utt.frames(),
                cfg.downsample_product(),
            ));
        }
    }
    let (h, segs): (ValueId, Segments) = graph.documents(&docs, phase)?;
    debug_assert_eq!(segs.total(), labels.len());
    let logits = graph.tape_mut().pair_logits(h, &segs, q, &pairs)?;
    let a: Vec<f64> = graph.tape().value(logits).data().iter().map(|v| v.f64()).collect();
    let (value, grad) = margin_loss_logits(&a, &labels, loss_cfg)?;
    if !value.is_finite() {
        let names: Vec<String> = groups.iter().map(|g| data.phrases[g.phrase].text()).collect();
        return Err(Error::NonFinite(format!("loss for batch of phrases {names:?}")));
    }
    let grad = Tensor::matrix(grad.len(), 1, grad.into_iter().map(T::of).collect())?;
    let loss = graph.tape_mut().loss(logits, T::of(value), grad)?;
    Ok(BatchForward { graph, loss, value })
}

/// Mean per-phrase loss over fixed groups, in inference mode.
pub fn evaluate_loss(
    params: &ParameterStore,
    data: &TrainingData,
    groups: &[Group],
    loss_cfg: &LossConfig,
    chunk: usize,
) -> Result<f64> {
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for c in groups.chunks(chunk.max(1)) {
        total += batch_forward(params, data, c, loss_cfg, &mut Phase::Infer)?.value;
    }
    Ok(total / groups.len() as f64)
}

/// Adam over sampled batches with validation-driven halving and early
/// stopping. Returns the parameters of the best validation epoch.
pub fn train(
    corpus: &TrainingCorpus,
    inventory: &SymbolInventory,
    cfg: &TrainConfig,
    seed: u64,
    resume: Option<Resume>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    cfg.loss.validate()?;
    cfg.sampler.validate()?;
    cfg.schedule.validate()?;
    if inventory.len() != cfg.model.inventory_size {
        return Err(Error::Config(format!(
            "model inventory size {} but corpus spells with {} symbols",
            cfg.model.inventory_size,
            inventory.len()
        )));
    }
    let data = TrainingData::new(corpus, inventory, &cfg.schedule, seed)?;
    let val_groups = if data.val_tokens.is_empty() {
        Vec::new()
    } else {
        let sc = SamplerConfig {
            batch_phrases: cfg.schedule.validation_groups,
            ..cfg.sampler
        };
        sample_batch(&data.phrases, &data.val_tokens, &data.val_utts, &sc, &mut stream(seed, 2))?
    };

    let (mut params, mut adam, first_epoch) = match resume {
        Some(r) => {
            if r.params.config() != &cfg.model {
                return Err(Error::Config("resumed parameters were trained with another model config".into()));
            }
            (r.params, r.adam, r.epochs_done + 1)
        }
        None => (
            ParameterStore::init(&cfg.model, &mut stream(seed, 3))?,
            Adam::new(cfg.schedule.learning_rate),
            1,
        ),
    };
    let mut sample_rng = stream(seed ^ (first_epoch as u64) << 32, 4);
    let mut dropout_rng = stream(seed ^ (first_epoch as u64) << 32, 5);
    let steps = data.steps_per_epoch(&cfg.sampler);
    let mut best = (f64::INFINITY, params.clone(), first_epoch);
    let mut stagnant = 0;
    let mut log = Vec::new();
    for epoch in first_epoch..first_epoch + cfg.schedule.max_epochs {
        let lr = adam.lr;
        let mut train_total = 0.0;
        for _ in 0..steps {
            let groups = sample_batch(
                &data.phrases,
                &data.train_tokens,
                &data.train_utts,
                &cfg.sampler,
                &mut sample_rng,
            )?;
            let (grads, stats, value) = {
                let fwd = batch_forward(&params, &data, &groups, &cfg.loss, &mut Phase::Train(&mut dropout_rng))?;
                (fwd.graph.gradients(fwd.loss)?, fwd.graph.batch_stats().to_vec(), fwd.value)
            };
            adam.step(params.tensors_mut(), &grads)?;
            params.fold_batch_stats(&stats)?;
            train_total += value / groups.len() as f64;
        }
        let val_loss = evaluate_loss(&params, &data, &val_groups, &cfg.loss, cfg.sampler.batch_phrases)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss after epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss: train_total / steps as f64,
            val_loss,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
        if val_loss < best.0 - cfg.schedule.min_improvement {
            best = (val_loss, params.clone(), epoch);
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant >= cfg.schedule.stop_after {
                break;
            }
            if stagnant % cfg.schedule.halve_after == 0 {
                adam.lr /= 2.0;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        adam,
        log,
        best_epoch: best.2,
    })
}
