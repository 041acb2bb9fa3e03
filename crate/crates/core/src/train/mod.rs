//! Mini-batch training with negative sampling, sparse Adam, L2
//! regularization and early stopping on validation HITS@10.

mod adam;
mod loss;
mod sampler;

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{self, FilterIndex, TieRule};
use crate::model::{EmbeddingModel, Gradients, ModelKind, NormKind, Scalar};
use crate::triples::{Split, Triple, TripleStore};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use loss::{log_sigmoid, loss, negative_weights, pair_loss, sigmoid, LossSpec};
pub use sampler::{NegativeSampler, DEFAULT_MAX_RETRIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MarginRanking,
    SelfAdversarialLogistic,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::MarginRanking => "margin-ranking",
            LossKind::SelfAdversarialLogistic => "self-adversarial-logistic",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin-ranking" | "margin" => Ok(LossKind::MarginRanking),
            "self-adversarial-logistic" | "logistic" => Ok(LossKind::SelfAdversarialLogistic),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    BasicUniform,
    SelfAdversarial,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::BasicUniform => "basic-uniform",
            SamplerKind::SelfAdversarial => "self-adversarial",
        }
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic-uniform" | "basic" => Ok(SamplerKind::BasicUniform),
            "self-adversarial" => Ok(SamplerKind::SelfAdversarial),
            _ => Err(Error::Config(format!("unknown sampler {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// `None` selects the model kind's default norm.
    pub norm: Option<NormKind>,
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_negatives: usize,
    pub epochs: usize,
    pub l2_coefficient: f64,
    pub loss: LossKind,
    /// Margin of the ranking loss; offset added to scores in the logistic loss.
    pub margin: f64,
    pub adversarial_temperature: f64,
    pub sampler: SamplerKind,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    /// Cap on validation triples used for early stopping (0 = all).
    pub eval_sample: usize,
    /// Worker count for gradient computation; 1 is fully deterministic.
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// dim 400, 50 negatives, lr 0.001, L2 0.01, batch 5000, 100 epochs.
    PaperBasic,
    /// RotatE tuned: dim 976, batch 4096, 8 negatives, basic sampler.
    PaperTunedRotate,
    /// Small single-core setting for the synthetic benchmark.
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::PaperBasic => "paper-basic",
            Profile::PaperTunedRotate => "paper-tuned-rotate",
            Profile::Desk => "desk",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-basic" => Ok(Profile::PaperBasic),
            "paper-tuned-rotate" => Ok(Profile::PaperTunedRotate),
            "desk" => Ok(Profile::Desk),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = TrainConfig {
            model: ModelKind::RotatE,
            norm: None,
            dim: 400,
            learning_rate: 0.001,
            batch_size: 5000,
            num_negatives: 50,
            epochs: 100,
            l2_coefficient: 0.01,
            loss: LossKind::SelfAdversarialLogistic,
            margin: 6.0,
            adversarial_temperature: 1.0,
            sampler: SamplerKind::SelfAdversarial,
            patience: 3,
            eval_every: 5,
            eval_sample: 0,
            threads: 1,
            seed: 0,
        };
        match profile {
            Profile::PaperBasic => base,
            Profile::PaperTunedRotate => TrainConfig {
                dim: 976,
                batch_size: 4096,
                num_negatives: 8,
                sampler: SamplerKind::BasicUniform,
                ..base
            },
            Profile::Desk => TrainConfig {
                dim: 200,
                learning_rate: 0.01,
                batch_size: 1024,
                num_negatives: 16,
                epochs: 60,
                l2_coefficient: 0.0,
                eval_every: 5,
                eval_sample: 500,
                patience: 3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.num_negatives == 0 {
            return fail("num_negatives must be >= 1");
        }
        if self.patience == 0 {
            return fail("patience must be >= 1");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1");
        }
        if self.dim == 0 {
            return fail("dim must be >= 1");
        }
        if self.threads == 0 {
            return fail("threads must be >= 1");
        }
        if self.l2_coefficient.is_nan() || self.l2_coefficient < 0.0 {
            return fail("l2_coefficient must be >= 0");
        }
        Ok(())
    }

    /// Keys accepted by [`TrainConfig::set`].
    pub const KEYS: [&'static str; 17] = [
        "model",
        "norm",
        "dim",
        "learning_rate",
        "batch_size",
        "num_negatives",
        "epochs",
        "l2_coefficient",
        "loss",
        "margin",
        "adversarial_temperature",
        "sampler",
        "patience",
        "eval_every",
        "eval_sample",
        "threads",
        "seed",
    ];

    /// Sets one field from its name and textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "model" => self.model = value.parse()?,
            "norm" | "norm_kind" => self.norm = Some(value.parse()?),
            "dim" => self.dim = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "num_negatives" => self.num_negatives = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "l2_coefficient" => self.l2_coefficient = num(key, value)?,
            "loss" | "loss_kind" => self.loss = value.parse()?,
            "margin" => self.margin = num(key, value)?,
            "adversarial_temperature" => self.adversarial_temperature = num(key, value)?,
            "sampler" | "sampler_kind" => self.sampler = value.parse()?,
            "patience" => self.patience = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_sample" => self.eval_sample = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec::from(self)
    }

    pub fn init_model<F: Scalar>(&self, num_entities: usize, num_relations: usize) -> Result<EmbeddingModel<F>> {
        let model = EmbeddingModel::init(self.model, self.dim, num_entities, num_relations, self.seed)?;
        Ok(match self.norm {
            Some(n) => model.with_norm(n),
            None => model,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    /// Best validation HITS@10 seen; `None` when validation never ran.
    pub best_validation_metric: Option<f64>,
    pub best_epoch: usize,
    pub wall_clock_train_seconds: f64,
    pub loss_curve: Vec<f64>,
}

impl TrainReport {
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs_run = {}", self.epochs_run);
        let _ = writeln!(s, "final_train_loss = {}", self.final_train_loss);
        match self.best_validation_metric {
            Some(v) => {
                let _ = writeln!(s, "best_validation_hits@10 = {v}");
            }
            None => {
                let _ = writeln!(s, "best_validation_hits@10 = none");
            }
        }
        let _ = writeln!(s, "best_epoch = {}", self.best_epoch);
        let _ = writeln!(s, "wall_clock_train_seconds = {}", self.wall_clock_train_seconds);
        s
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", i + 1);
        }
        s
    }
}

/// Called around every optimizer application.
pub trait StepHook<F: Scalar> {
    /// Runs on the averaged batch gradient before Adam consumes it.
    fn before_step(&mut self, _grads: &mut Gradients, _adam: &mut AdamState<F>) {}
    /// Runs right after the parameters were updated and projected.
    fn after_step(&mut self, _model: &mut EmbeddingModel<F>) {}
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl<F: Scalar> StepHook<F> for NoHook {}

/// Validation HITS@10 (filtered, realistic ties) on at most
/// `config.eval_sample` validation triples, chosen by a seeded shuffle.
pub fn validation_hits10<'a, F: Scalar>(
    store: &'a TripleStore,
    config: &TrainConfig,
) -> impl FnMut(&EmbeddingModel<F>) -> Result<f64> + 'a {
    let mut valid = store.split_triples(Split::Valid);
    if config.eval_sample > 0 && valid.len() > config.eval_sample {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05ee_d0f7_a11d);
        valid.shuffle(&mut rng);
        valid.truncate(config.eval_sample);
    }
    let filter = FilterIndex::for_store(store);
    move |model: &EmbeddingModel<F>| {
        let ranks = eval::rank_triples(model, &valid, Some(&filter), TieRule::Realistic)?;
        eval::hits_at_n(&ranks.ranks, 10)
    }
}

/// Trains a freshly initialized model with validation-based early stopping.
pub fn train(store: &TripleStore, config: &TrainConfig) -> Result<(EmbeddingModel, TrainReport)> {
    config.validate()?;
    let model = config.init_model(store.num_entities(), store.num_relations())?;
    let validator = validation_hits10(store, config);
    train_model(model, store, config, validator, &mut NoHook)
}

/// Continues training `model`. `validator` is consulted every
/// `eval_every` epochs when the store has a validation split; the best
/// snapshot (by validator value) is returned.
pub fn train_model<F, V, H>(
    mut model: EmbeddingModel<F>,
    store: &TripleStore,
    config: &TrainConfig,
    mut validator: V,
    hook: &mut H,
) -> Result<(EmbeddingModel<F>, TrainReport)>
where
    F: Scalar,
    V: FnMut(&EmbeddingModel<F>) -> Result<f64>,
    H: StepHook<F> + ?Sized,
{
    config.validate()?;
    let start = Instant::now();
    let train = store.split_triples(Split::Train);
    if train.is_empty() && config.epochs > 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let early_stopping = store.split_len(Split::Valid) > 0;
    if !early_stopping && config.epochs > 0 {
        log::warn!("validation split is empty; early stopping disabled");
    }

    let spec = config.loss_spec();
    let sampler = NegativeSampler::new(&train, store.num_entities());
    let mut adam = AdamState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, EmbeddingModel<F>)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let positives: Vec<Triple> = chunk.iter().map(|&i| train[i]).collect();
            let negatives = sampler.sample(&positives, config.num_negatives, &mut rng);
            let (value, mut grads) = batch_gradients(&model, &positives, &negatives, &spec, config.threads);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            hook.before_step(&mut grads, &mut adam);
            adam_step(&mut model, &grads, &mut adam, config.learning_rate);
            model.project_constraints();
            hook.after_step(&mut model);
            epoch_loss += value;
            batches += 1;
        }
        loss_curve.push(epoch_loss / batches.max(1) as f64);

        if early_stopping && (epoch + 1) % config.eval_every == 0 {
            let metric = validator(&model)?;
            log::info!("epoch {}: loss {:.5} valid hits@10 {:.4}", epoch + 1, loss_curve[epoch], metric);
            match &best {
                Some((b, _, _)) if metric <= *b => stale += 1,
                _ => {
                    best = Some((metric, epoch + 1, model.clone()));
                    stale = 0;
                }
            }
            if stale >= config.patience {
                break;
            }
        } else {
            log::debug!("epoch {}: loss {:.5}", epoch + 1, loss_curve[epoch]);
        }
    }

    let epochs_run = loss_curve.len();
    let final_train_loss = loss_curve.last().copied().unwrap_or(f64::NAN);
    let (best_metric, best_epoch, model) = match best {
        Some((m, e, snapshot)) => (Some(m), e, snapshot),
        None => (None, epochs_run, model),
    };
    let report = TrainReport {
        epochs_run,
        final_train_loss,
        best_validation_metric: best_metric,
        best_epoch,
        wall_clock_train_seconds: start.elapsed().as_secs_f64(),
        loss_curve,
    };
    Ok((model, report))
}

/// Mean batch loss (data + L2) and its gradient. With more than one
/// thread the batch is cut into that many contiguous shards whose
/// gradients are reduced in shard order.
pub(crate) fn batch_gradients<F: Scalar>(
    model: &EmbeddingModel<F>,
    positives: &[Triple],
    negatives: &[Triple],
    spec: &LossSpec,
    threads: usize,
) -> (f64, Gradients) {
    let k = negatives.len() / positives.len().max(1);
    let mut grads = Gradients::for_model(model);
    let data = if threads <= 1 || positives.len() < 2 * threads {
        loss::data_term(model, positives, negatives, spec, &mut grads)
    } else {
        let shard = positives.len().div_ceil(threads);
        let parts: Vec<(f64, Gradients)> = positives
            .par_chunks(shard)
            .enumerate()
            .map(|(i, pos)| {
                let start = i * shard;
                let negs = &negatives[start * k..(start + pos.len()) * k];
                let mut g = Gradients::for_model(model);
                let v = loss::data_term(model, pos, negs, spec, &mut g);
                (v, g)
            })
            .collect();
        let mut total = 0.0;
        for (v, g) in &parts {
            total += v;
            grads.merge(g);
        }
        total
    };
    let n = positives.len().max(1) as f64;
    grads.scale(1.0 / n);
    let reg = loss::l2_term(model, spec.l2, &mut grads);
    (data / n + reg, grads)
}
