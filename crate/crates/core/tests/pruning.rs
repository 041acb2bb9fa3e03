use edgekg_core::checkpoint::{self, Encoding};
use edgekg_core::prune::{self, build_mask, MaskScope, PruneMask, SensitivityKind, SensitivityMap};
use edgekg_core::synth::{self, SynthConfig};
use edgekg_core::{EmbeddingModel, Error, ModelKind, Split, Table, TrainConfig, TripleFormat, TripleStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(seed: u64, sizes: &[(Table, usize)], levels: u32) -> SensitivityMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SensitivityMap {
        tables: sizes
            .iter()
            .map(|(t, n)| (*t, (0..*n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect()))
            .collect(),
    }
}

fn pruned(mask: &PruneMask) -> Vec<(Table, usize)> {
    mask.tables()
        .flat_map(|(t, keep)| keep.iter().enumerate().filter(|(_, k)| !**k).map(move |(i, _)| (t, i)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_mask_prunes_the_exact_count_of_least_sensitive(seed in any::<u64>(), ratio in 0.0f64..0.99, levels in 2u32..1000) {
        let map = random_map(seed, &[(Table::Entity, 120), (Table::Relation, 37)], levels);
        let mask = build_mask(&map, ratio, MaskScope::Global).unwrap();
        let n = 157;
        prop_assert_eq!(mask.num_pruned(), (ratio * n as f64).round() as usize);
        let max_pruned = pruned(&mask).iter().map(|(t, i)| map.table(*t)[*i]).fold(f64::NEG_INFINITY, f64::max);
        for (t, keep) in mask.tables() {
            for (i, k) in keep.iter().enumerate() {
                if *k {
                    prop_assert!(map.table(t)[i] >= max_pruned);
                }
            }
        }
    }

    #[test]
    fn masks_nest_as_the_ratio_grows(seed in any::<u64>(), a in 0.0f64..0.99, b in 0.0f64..0.99, levels in 2u32..50) {
        let (lo, hi) = (a.min(b), a.max(b));
        let map = random_map(seed, &[(Table::Entity, 90), (Table::Relation, 30), (Table::Projection, 16)], levels);
        for scope in [MaskScope::Global, MaskScope::PerTable] {
            let small = build_mask(&map, lo, scope).unwrap();
            let large = build_mask(&map, hi, scope).unwrap();
            for ((_, ks), (_, kl)) in small.tables().zip(large.tables()) {
                for (s, l) in ks.iter().zip(kl) {
                    prop_assert!(*s || !*l, "pruned at {} but kept at {}", lo, hi);
                }
            }
        }
    }
}

#[test]
fn per_table_scope_applies_the_ratio_to_each_table() {
    let map = random_map(1, &[(Table::Entity, 100), (Table::Relation, 10)], 1000);
    let mask = build_mask(&map, 0.3, MaskScope::PerTable).unwrap();
    assert_eq!(mask.keep(Table::Entity).iter().filter(|k| !**k).count(), 30);
    assert_eq!(mask.keep(Table::Relation).iter().filter(|k| !**k).count(), 3);
}

#[test]
fn invalid_ratios_and_sensitivities_are_rejected() {
    let map = random_map(1, &[(Table::Entity, 10)], 10);
    assert!(build_mask(&map, 1.0, MaskScope::Global).is_err());
    assert!(build_mask(&map, -0.1, MaskScope::Global).is_err());
    let bad = SensitivityMap {
        tables: vec![(Table::Entity, vec![0.1, f64::NAN])],
    };
    assert!(build_mask(&bad, 0.5, MaskScope::Global).is_err());
}

fn toy_store() -> TripleStore {
    // relation `only_train` never occurs in the validation split
    let mut text = String::new();
    for i in 0..40 {
        text.push_str(&format!("e{}\tr{}\te{}\n", i, i % 2, (i * 7 + 3) % 40));
    }
    let store = TripleStore::parse(&text, TripleFormat::default()).unwrap().split([0.5, 0.5, 0.0], 2).unwrap();
    let mut all: Vec<String> = store.triples().iter().map(|t| {
        let (h, r, tl) = store.labels_of(t);
        format!("{h}\t{r}\t{tl}")
    }).collect();
    let mut splits: Vec<Split> = (0..store.len()).map(|i| store.split_of(i)).collect();
    for i in 0..5 {
        all.push(format!("e{i}\tonly_train\te{}", i + 1));
        splits.push(Split::Train);
    }
    TripleStore::parse(&all.join("\n"), TripleFormat::default()).unwrap().with_assignment(splits).unwrap()
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        model: ModelKind::TransE,
        dim: 6,
        batch_size: 8,
        num_negatives: 3,
        epochs: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn untouched_parameters_have_zero_sensitivity() {
    let store = toy_store();
    let config = toy_config();
    let model: EmbeddingModel<f64> = config.init_model(store.num_entities(), store.num_relations()).unwrap();
    let map = prune::sensitivity(&model, &store, Split::Valid, &config, 0, SensitivityKind::Gradient).unwrap();
    let r = store.relations().id("only_train").unwrap() as usize;
    let row = &map.table(Table::Relation)[r * 6..(r + 1) * 6];
    assert!(row.iter().all(|v| *v == 0.0));
    assert!(map.table(Table::Relation).iter().any(|v| *v > 0.0));
    assert!(map.tables.iter().flat_map(|(_, v)| v).all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn sensitivity_accumulates_a_mean_of_absolute_batch_gradients() {
    let store = toy_store();
    let config = toy_config();
    let model: EmbeddingModel<f64> = config.init_model(store.num_entities(), store.num_relations()).unwrap();
    let s = |k| prune::sensitivity(&model, &store, Split::Valid, &config, k, SensitivityKind::Gradient).unwrap();
    let (one, two) = (s(1), s(2));
    for ((_, a), (_, b)) in one.tables.iter().zip(&two.tables) {
        for (x, y) in a.iter().zip(b) {
            // 2 * mean(|g1|, |g2|) - |g1| = |g2| >= 0
            assert!(2.0 * y - x >= -1e-12);
        }
    }
    // |g * w| is the gradient map scaled by |w|
    let gw = prune::sensitivity(&model, &store, Split::Valid, &config, 2, SensitivityKind::GradientTimesWeight).unwrap();
    for ((t, a), (_, b)) in two.tables.iter().zip(&gw.tables) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let w = model.table(*t)[i].abs();
            assert!((x * w - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }
}

#[test]
fn empty_split_sensitivity_is_an_error() {
    let store = toy_store();
    let config = toy_config();
    let model: EmbeddingModel<f64> = config.init_model(store.num_entities(), store.num_relations()).unwrap();
    assert!(matches!(
        prune::sensitivity(&model, &store, Split::Test, &config, 0, SensitivityKind::Gradient),
        Err(Error::Config(_))
    ));
}

fn trained_setup() -> (TripleStore, TrainConfig, EmbeddingModel) {
    let store = synth::generate(&SynthConfig {
        num_people: 200,
        num_locations: 6,
        ..SynthConfig::default()
    })
    .unwrap()
    .split([0.8, 0.1, 0.1], 1)
    .unwrap();
    let config = TrainConfig {
        dim: 8,
        batch_size: 128,
        num_negatives: 4,
        epochs: 3,
        ..TrainConfig::default()
    };
    let (model, _) = edgekg_core::train(&store, &config).unwrap();
    (store, config, model)
}

#[test]
fn mask_holds_after_every_finetune_step() {
    let (store, config, model) = trained_setup();
    let map = prune::sensitivity(&model, &store, Split::Valid, &config, 0, SensitivityKind::Gradient).unwrap();
    let mask = build_mask(&map, 0.5, MaskScope::Global).unwrap();
    let mut steps = 0;
    let start = {
        let mut m = model.clone();
        prune::apply_mask(&mut m, &mask).unwrap();
        m
    };
    let (tuned, report) = prune::finetune_with(model, &mask, &store, &config, &mut |m: &EmbeddingModel| {
        assert!(mask.is_consistent_with(m));
        steps += 1;
    })
    .unwrap();
    assert_eq!(report.epochs_run, 3);
    assert!(steps >= 3 * store.split_len(Split::Train).div_ceil(128));
    assert!(mask.is_consistent_with(&tuned));
    assert_ne!(tuned, start, "kept parameters should move");
    assert_eq!(tuned.nonzero_count(), start.nonzero_count());
}

#[test]
fn zero_epoch_finetune_returns_the_masked_model() {
    let (store, config, model) = trained_setup();
    let map = prune::sensitivity(&model, &store, Split::Valid, &config, 0, SensitivityKind::Gradient).unwrap();
    let mask = build_mask(&map, 0.4, MaskScope::Global).unwrap();
    let mut masked = model.clone();
    prune::apply_mask(&mut masked, &mask).unwrap();
    let config = TrainConfig { epochs: 0, ..config };
    let (out, report) = prune::finetune(model, &mask, &store, &config).unwrap();
    assert_eq!(out, masked);
    assert_eq!(report.epochs_run, 0);
}

#[test]
fn pruned_checkpoints_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (store, config, mut model) = trained_setup();
    let map = prune::sensitivity(&model, &store, Split::Valid, &config, 0, SensitivityKind::Gradient).unwrap();
    let mask = build_mask(&map, 0.67, MaskScope::Global).unwrap();
    prune::apply_mask(&mut model, &mask).unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let size = prune::save_sparse(&model, &mask, &a).unwrap();
    let (back, back_mask) = prune::load_sparse(&a).unwrap();
    assert_eq!(back, model);
    let back_mask = back_mask.unwrap();
    assert_eq!(back_mask, mask);
    assert_eq!(prune::save_sparse(&back, &back_mask, &b).unwrap(), size);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let dense = checkpoint::encode(&model, None, Encoding::Dense).unwrap().len();
    assert!((size as f64) < 0.4 * dense as f64, "{size} vs {dense}");
}

#[test]
fn unpruned_models_fall_back_to_dense_size() {
    let model = EmbeddingModel::<f32>::init(ModelKind::RotatE, 16, 300, 5, 0).unwrap();
    let mask = PruneMask::all_keep(&model);
    let dense = checkpoint::encode(&model, None, Encoding::Dense).unwrap().len();
    let stored = prune::sparse_bytes(&model, &mask).unwrap().len();
    assert!(stored <= dense + 64, "{stored} vs {dense}");
    let report = prune::PruneReport::measure(&model, &mask).unwrap();
    assert_eq!(report.parameters_nonzero, report.parameters_total);
    assert_eq!(report.macs_per_query_effective, report.macs_per_query_dense);
}

#[test]
fn unapplied_masks_are_rejected_by_the_writer() {
    let model = EmbeddingModel::<f32>::init(ModelKind::DistMult, 4, 10, 2, 0).unwrap();
    let map = random_map(0, &[(Table::Entity, 40), (Table::Relation, 8)], 100);
    let mask = build_mask(&map, 0.5, MaskScope::Global).unwrap();
    assert!(prune::sparse_bytes(&model, &mask).is_err());
}
