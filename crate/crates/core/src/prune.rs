//! Gradient-sensitivity pruning and mask-preserving fine-tuning.
//!
//! The sensitivity of a parameter is the mean absolute gradient of the
//! training loss over validation batches. The least sensitive
//! `round(ratio * total)` parameters are set to zero; fine-tuning keeps them
//! there by zeroing their gradients before every optimizer step and their
//! values after it.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, Encoding};
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Gradients, Scalar, Table};
use crate::train::{self, AdamState, NegativeSampler, StepHook, TrainConfig, TrainReport};
use crate::triples::{Split, Triple, TripleStore};

/// Default fine-tuning length.
pub const FINETUNE_EPOCHS: usize = 300;

/// Per-parameter sensitivities, one array per model table.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub tables: Vec<(Table, Vec<f64>)>,
}

impl SensitivityMap {
    pub fn zeros<F: Scalar>(model: &EmbeddingModel<F>) -> Self {
        Self {
            tables: model.tables().map(|t| (t, vec![0.0; model.table(t).len()])).collect(),
        }
    }

    pub fn table(&self, table: Table) -> &[f64] {
        self.tables.iter().find(|(t, _)| *t == table).map_or(&[], |(_, v)| v)
    }

    pub fn total(&self) -> usize {
        self.tables.iter().map(|(_, v)| v.len()).sum()
    }

    fn add_abs(&mut self, grads: &Gradients, weights: Option<&dyn Fn(Table, usize) -> f64>) {
        for (table, values) in &mut self.tables {
            let Some(g) = grads.table(*table) else { continue };
            let width = g.width();
            for (row, vals) in g.iter() {
                for (i, v) in vals.iter().enumerate() {
                    let flat = row * width + i;
                    let w = weights.map_or(1.0, |f| f(*table, flat).abs());
                    values[flat] += (v * w).abs();
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityKind {
    /// Mean `|dL/dw|`.
    #[default]
    Gradient,
    /// Mean `|w * dL/dw|`.
    GradientTimesWeight,
}

/// Mean absolute loss gradient over batches of `split` (normally the
/// validation split). Batches are cut from a seeded shuffle of the split
/// using the training batch size; `num_batches = 0` uses every batch.
/// Negatives are drawn as in training, one sampler stream per batch.
pub fn sensitivity<F: Scalar>(
    model: &EmbeddingModel<F>,
    store: &TripleStore,
    split: Split,
    config: &TrainConfig,
    num_batches: usize,
    kind: SensitivityKind,
) -> Result<SensitivityMap> {
    config.validate()?;
    let mut valid = store.split_triples(split);
    if valid.is_empty() {
        return Err(Error::Config(format!("sensitivity needs a non-empty {} split", split.name())));
    }
    valid.iter().try_for_each(|t| model.check_triple(t))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e75);
    valid.shuffle(&mut rng);
    let mut batches: Vec<&[Triple]> = valid.chunks(config.batch_size).collect();
    if num_batches > 0 {
        batches.truncate(num_batches);
    }
    let sampler = NegativeSampler::new(&store.split_triples(Split::Train), store.num_entities());
    let spec = config.loss_spec();
    let grads: Vec<Gradients> = batches
        .par_iter()
        .enumerate()
        .map(|(b, positives)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(b as u64));
            let negatives = sampler.sample(positives, config.num_negatives, &mut rng);
            train::loss(model, positives, &negatives, &spec).map(|(_, g)| g)
        })
        .collect::<Result<_>>()?;

    let mut map = SensitivityMap::zeros(model);
    let weight = |t: Table, i: usize| model.table(t)[i].to_f64();
    for g in &grads {
        match kind {
            SensitivityKind::Gradient => map.add_abs(g, None),
            SensitivityKind::GradientTimesWeight => map.add_abs(g, Some(&weight)),
        }
    }
    let n = grads.len() as f64;
    for (_, v) in &mut map.tables {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskScope {
    /// One threshold over all parameters.
    #[default]
    Global,
    /// The ratio applied to each table separately.
    PerTable,
}

/// Keep (`true`) or prune (`false`) per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    tables: Vec<(Table, Vec<bool>)>,
    pub pruning_ratio: f64,
    /// Smallest sensitivity that was kept.
    pub threshold: f64,
}

impl PruneMask {
    pub fn from_parts(tables: Vec<(Table, Vec<bool>)>, pruning_ratio: f64, threshold: f64) -> Self {
        Self {
            tables,
            pruning_ratio,
            threshold,
        }
    }

    pub fn all_keep<F: Scalar>(model: &EmbeddingModel<F>) -> Self {
        Self {
            tables: model.tables().map(|t| (t, vec![true; model.table(t).len()])).collect(),
            pruning_ratio: 0.0,
            threshold: f64::NEG_INFINITY,
        }
    }

    pub fn tables(&self) -> impl Iterator<Item = (Table, &[bool])> {
        self.tables.iter().map(|(t, k)| (*t, k.as_slice()))
    }

    pub fn keep(&self, table: Table) -> &[bool] {
        self.tables.iter().find(|(t, _)| *t == table).map_or(&[], |(_, k)| k)
    }

    pub fn keep_mut(&mut self, table: Table) -> Option<&mut [bool]> {
        self.tables.iter_mut().find(|(t, _)| *t == table).map(|(_, k)| k.as_mut_slice())
    }

    pub fn total(&self) -> usize {
        self.tables.iter().map(|(_, k)| k.len()).sum()
    }

    pub fn num_pruned(&self) -> usize {
        self.tables.iter().map(|(_, k)| k.iter().filter(|x| !**x).count()).sum()
    }

    pub fn check_shape<F: Scalar>(&self, model: &EmbeddingModel<F>) -> Result<()> {
        let want: Vec<(Table, usize)> = model.tables().map(|t| (t, model.table(t).len())).collect();
        let got: Vec<(Table, usize)> = self.tables.iter().map(|(t, k)| (*t, k.len())).collect();
        if want == got {
            Ok(())
        } else {
            Err(Error::Shape(format!("mask shape {got:?} does not match model {want:?}")))
        }
    }

    /// Every pruned position holds exactly zero.
    pub fn is_consistent_with<F: Scalar>(&self, model: &EmbeddingModel<F>) -> bool {
        self.check_shape(model).is_ok()
            && self
                .tables
                .iter()
                .all(|(t, keep)| keep.iter().zip(model.table(*t)).all(|(k, v)| *k || v.to_f64() == 0.0))
    }

    /// Flat positions of pruned parameters in `table`.
    pub fn pruned_positions(&self, table: Table) -> impl Iterator<Item = usize> + '_ {
        self.keep(table).iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i)
    }
}

/// Prunes exactly `round(ratio * n)` entries per scope: the least
/// sensitive ones, ties broken by position.
pub fn build_mask(sens: &SensitivityMap, ratio: f64, scope: MaskScope) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("pruning ratio {ratio} outside [0, 1)")));
    }
    if sens.tables.iter().flat_map(|(_, v)| v).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Shape("sensitivities must be finite and non-negative".into()));
    }
    let mut tables: Vec<(Table, Vec<bool>)> = sens.tables.iter().map(|(t, v)| (*t, vec![true; v.len()])).collect();
    let mut threshold = f64::INFINITY;
    let mut select = |entries: Vec<(f64, usize, usize)>, tables: &mut Vec<(Table, Vec<bool>)>| {
        let mut entries = entries;
        let count = (ratio * entries.len() as f64).round() as usize;
        entries.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, ti, i) in &entries[..count] {
            tables[ti].1[i] = false;
        }
        if let Some(first_kept) = entries.get(count) {
            threshold = threshold.min(first_kept.0);
        }
    };
    match scope {
        MaskScope::Global => {
            let entries = sens
                .tables
                .iter()
                .enumerate()
                .flat_map(|(ti, (_, v))| v.iter().enumerate().map(move |(i, s)| (*s, ti, i)))
                .collect();
            select(entries, &mut tables);
        }
        MaskScope::PerTable => {
            for (ti, (_, v)) in sens.tables.iter().enumerate() {
                select(v.iter().enumerate().map(|(i, s)| (*s, ti, i)).collect(), &mut tables);
            }
        }
    }
    Ok(PruneMask {
        tables,
        pruning_ratio: ratio,
        threshold,
    })
}

/// Sets pruned positions to exactly zero.
pub fn apply_mask<F: Scalar>(model: &mut EmbeddingModel<F>, mask: &PruneMask) -> Result<()> {
    mask.check_shape(model)?;
    for (table, keep) in mask.tables() {
        for (v, k) in model.table_mut(table).iter_mut().zip(keep) {
            if !*k {
                *v = F::ZERO;
            }
        }
    }
    Ok(())
}

/// Step hook that pins pruned parameters to zero: their gradients are
/// cleared before each update, their Adam moments zeroed on the first step,
/// and their values re-zeroed after every update.
#[derive(Debug, Clone)]
pub struct MaskHook<'a> {
    mask: &'a PruneMask,
    started: bool,
    pub steps: usize,
}

impl<'a> MaskHook<'a> {
    pub fn new(mask: &'a PruneMask) -> Self {
        Self {
            mask,
            started: false,
            steps: 0,
        }
    }
}

impl<F: Scalar> StepHook<F> for MaskHook<'_> {
    fn before_step(&mut self, grads: &mut Gradients, adam: &mut AdamState<F>) {
        for (table, keep) in self.mask.tables() {
            if !self.started {
                let width = grads.table(table).map_or(1, |g| g.width());
                adam.zero_positions(table, width, self.mask.pruned_positions(table));
            }
            let Some(g) = grads.table_mut(table) else { continue };
            let width = g.width();
            for (row, vals) in g.iter_mut() {
                for (i, v) in vals.iter_mut().enumerate() {
                    if !keep[row * width + i] {
                        *v = 0.0;
                    }
                }
            }
        }
        self.started = true;
    }

    fn after_step(&mut self, model: &mut EmbeddingModel<F>) {
        apply_mask(model, self.mask).expect("mask shape checked before fine-tuning");
        self.steps += 1;
    }
}

/// The fine-tuning profile derived from a training profile.
pub fn finetune_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        epochs: FINETUNE_EPOCHS,
        ..base.clone()
    }
}

/// Continues training a pruned model with the mask enforced at every step.
pub fn finetune(model: EmbeddingModel, mask: &PruneMask, store: &TripleStore, config: &TrainConfig) -> Result<(EmbeddingModel, TrainReport)> {
    finetune_with(model, mask, store, config, &mut |_: &EmbeddingModel| {})
}

/// [`finetune`] with an observer called after every optimizer step.
pub fn finetune_with<F: Scalar>(
    mut model: EmbeddingModel<F>,
    mask: &PruneMask,
    store: &TripleStore,
    config: &TrainConfig,
    observe: &mut dyn FnMut(&EmbeddingModel<F>),
) -> Result<(EmbeddingModel<F>, TrainReport)> {
    apply_mask(&mut model, mask)?;
    struct Observed<'a, 'm, F: Scalar> {
        inner: MaskHook<'m>,
        observe: &'a mut dyn FnMut(&EmbeddingModel<F>),
    }
    impl<F: Scalar> StepHook<F> for Observed<'_, '_, F> {
        fn before_step(&mut self, grads: &mut Gradients, adam: &mut AdamState<F>) {
            self.inner.before_step(grads, adam);
        }
        fn after_step(&mut self, model: &mut EmbeddingModel<F>) {
            StepHook::<F>::after_step(&mut self.inner, model);
            (self.observe)(model);
        }
    }
    let mut hook = Observed {
        inner: MaskHook::new(mask),
        observe,
    };
    let validator = train::validation_hits10(store, config);
    train::train_model(model, store, config, validator, &mut hook)
}

/// Analytic multiply-accumulate count for ranking one query against every
/// entity.
pub fn macs_per_query<F: Scalar>(model: &EmbeddingModel<F>) -> u64 {
    let kind = model.kind();
    kind.macs_per_query(model.dim()) + model.num_entities() as u64 * kind.macs_per_candidate(model.dim())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub pruning_ratio: f64,
    pub parameters_total: usize,
    pub parameters_nonzero: usize,
    pub checkpoint_bytes_dense: usize,
    pub checkpoint_bytes_sparse: usize,
    pub macs_per_query_dense: u64,
    /// Dense count scaled by the nonzero fraction.
    pub macs_per_query_effective: u64,
    pub pre_prune_hits10: Option<f64>,
    pub post_prune_hits10: Option<f64>,
    pub post_finetune_hits10: Option<f64>,
}

const REPORT_COLUMNS: [&str; 11] = [
    "pruning_ratio",
    "parameters_total",
    "parameters_nonzero",
    "checkpoint_bytes_dense",
    "checkpoint_bytes_sparse",
    "macs_per_query_dense",
    "macs_per_query_effective",
    "pre_prune_hits10",
    "post_prune_hits10",
    "post_finetune_hits10",
    "storage_fraction",
];

impl PruneReport {
    /// Counts and sizes for a pruned model; the metrics start empty.
    pub fn measure(model: &EmbeddingModel, mask: &PruneMask) -> Result<Self> {
        let dense = checkpoint::encode(model, None, Encoding::Dense)?.len();
        let sparse = sparse_bytes(model, mask)?.len();
        let total = model.parameter_count();
        let nonzero = model.nonzero_count();
        let macs = macs_per_query(model);
        Ok(Self {
            pruning_ratio: mask.pruning_ratio,
            parameters_total: total,
            parameters_nonzero: nonzero,
            checkpoint_bytes_dense: dense,
            checkpoint_bytes_sparse: sparse,
            macs_per_query_dense: macs,
            macs_per_query_effective: (macs as f64 * nonzero as f64 / total.max(1) as f64).round() as u64,
            pre_prune_hits10: None,
            post_prune_hits10: None,
            post_finetune_hits10: None,
        })
    }

    fn values(&self) -> [String; 11] {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_owned(), |x| x.to_string());
        [
            self.pruning_ratio.to_string(),
            self.parameters_total.to_string(),
            self.parameters_nonzero.to_string(),
            self.checkpoint_bytes_dense.to_string(),
            self.checkpoint_bytes_sparse.to_string(),
            self.macs_per_query_dense.to_string(),
            self.macs_per_query_effective.to_string(),
            opt(self.pre_prune_hits10),
            opt(self.post_prune_hits10),
            opt(self.post_finetune_hits10),
            (self.checkpoint_bytes_sparse as f64 / self.checkpoint_bytes_dense as f64).to_string(),
        ]
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in REPORT_COLUMNS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// The smaller of the sparse and dense-masked encodings.
pub fn sparse_bytes(model: &EmbeddingModel, mask: &PruneMask) -> Result<Vec<u8>> {
    if !mask.is_consistent_with(model) {
        return Err(Error::Shape("mask not applied to the model".into()));
    }
    let sparse = checkpoint::encode(model, Some(mask), Encoding::Sparse)?;
    let dense = checkpoint::encode(model, Some(mask), Encoding::Masked)?;
    Ok(if sparse.len() <= dense.len() { sparse } else { dense })
}

/// Writes a pruned checkpoint, picking the smaller encoding; returns its size.
pub fn save_sparse(model: &EmbeddingModel, mask: &PruneMask, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = sparse_bytes(model, mask)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

/// Reads any checkpoint; pruned ones come back with their mask.
pub fn load_sparse(path: impl AsRef<Path>) -> Result<(EmbeddingModel, Option<PruneMask>)> {
    let c = checkpoint::load(path)?;
    Ok((c.model, c.mask))
}
