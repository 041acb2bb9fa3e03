use std::collections::{HashMap, HashSet};

use edgekg_core::synth::{self, CorruptionKind, SynthConfig, TypeClasses};
use edgekg_core::{Split, Triple, TripleStore};

/// Rule triples of one household with `c` children, counted by building
/// the household explicitly.
fn household_triples(c: usize) -> usize {
    let parents = [0usize, 1];
    let children: Vec<usize> = (2..2 + c).collect();
    let mut set = HashSet::new();
    set.insert(("spouse", 0, 1));
    set.insert(("spouse", 1, 0));
    for &k in &children {
        for &p in &parents {
            set.insert(("parent", p, k));
            set.insert(("child", k, p));
        }
        for &j in &children {
            if j != k {
                set.insert(("sibling", k, j));
            }
        }
    }
    for m in 0..2 + c {
        set.insert(("works", m, 0));
        set.insert(("lives", m, 0));
    }
    set.len()
}

fn expectation(config: &SynthConfig) -> f64 {
    let (lo, hi) = config.children;
    let sizes = lo..=hi;
    let n = sizes.clone().count() as f64;
    let triples: f64 = sizes.clone().map(household_triples).sum::<usize>() as f64 / n;
    let people: f64 = sizes.map(|c| (2 + c) as f64).sum::<f64>() / n;
    config.num_people as f64 / people * triples * (1.0 + config.noise_rate)
}

#[test]
fn default_graph_size_is_near_expectation() {
    let config = SynthConfig::default();
    let store = synth::generate(&config).unwrap();
    let want = expectation(&config);
    let got = store.len() as f64;
    assert!((got - want).abs() <= 0.1 * want, "{got} vs {want}");
    assert_eq!(store.num_entities(), 5000 + 11 + 40);
    assert_eq!(store.num_relations(), 6);
    let closed_form = synth::expected_triples(&config) * (1.0 + config.noise_rate);
    assert!((closed_form - want).abs() <= 1e-6 * want);
}

#[test]
fn generation_is_seed_deterministic() {
    let config = SynthConfig {
        num_people: 400,
        ..SynthConfig::default()
    };
    assert_eq!(synth::generate(&config).unwrap(), synth::generate(&config).unwrap());
    let other = SynthConfig { seed: 1, ..config.clone() };
    assert_ne!(synth::generate(&config).unwrap(), synth::generate(&other).unwrap());
}

fn ids(store: &TripleStore, rel: &str) -> Vec<Triple> {
    let r = store.relations().id(rel).unwrap();
    store.triples().iter().copied().filter(|t| t.relation == r).collect()
}

#[test]
fn noise_free_triples_follow_the_rules() {
    let config = SynthConfig {
        num_people: 1000,
        noise_rate: 0.0,
        ..SynthConfig::default()
    };
    let store = synth::generate(&config).unwrap();
    let label = |id: u32| store.entities().label(id).unwrap().to_owned();
    let all: HashSet<Triple> = store.triples().iter().copied().collect();
    let rel = |name| store.relations().id(name).unwrap();
    let (spouse, parent, child, sibling) = (rel(synth::SPOUSE_OF), rel(synth::PARENT_OF), rel(synth::CHILD_OF), rel(synth::SIBLING_OF));

    let mut parents_of: HashMap<u32, Vec<u32>> = HashMap::new();
    for t in ids(&store, synth::PARENT_OF) {
        assert!(all.contains(&Triple::new(t.tail, child, t.head)));
        parents_of.entry(t.tail).or_default().push(t.head);
    }
    for t in ids(&store, synth::CHILD_OF) {
        assert!(all.contains(&Triple::new(t.tail, parent, t.head)));
    }
    for ps in parents_of.values_mut() {
        ps.sort();
        assert!(ps.len() <= 2);
        if let [a, b] = ps[..] {
            assert!(all.contains(&Triple::new(a, spouse, b)));
        }
    }
    for t in ids(&store, synth::SPOUSE_OF) {
        assert!(all.contains(&Triple::new(t.tail, spouse, t.head)));
    }
    for t in ids(&store, synth::SIBLING_OF) {
        assert_ne!(t.head, t.tail);
        assert!(all.contains(&Triple::new(t.tail, sibling, t.head)));
        assert_eq!(parents_of[&t.head], parents_of[&t.tail]);
    }
    let mut home: HashMap<u32, u32> = HashMap::new();
    for t in ids(&store, synth::LIVES_IN) {
        assert!(label(t.tail).starts_with("location_"));
        assert!(home.insert(t.head, t.tail).is_none());
    }
    let mut job: HashMap<u32, u32> = HashMap::new();
    for t in ids(&store, synth::WORKS_AS) {
        assert!(label(t.tail).starts_with("occupation_"));
        assert!(job.insert(t.head, t.tail).is_none());
    }
    // every child shares its parents' home; children have no trade, parents do
    for (kid, ps) in &parents_of {
        assert_eq!(label(job[kid]), synth::UNKNOWN_OCCUPATION);
        for p in ps {
            assert_eq!(home[kid], home[p]);
            assert_ne!(label(job[p]), synth::UNKNOWN_OCCUPATION);
        }
    }
    assert_eq!(home.len(), 1000);
    assert_eq!(job.len(), 1000);
}

#[test]
fn noisy_triples_are_new_and_type_consistent() {
    let base = SynthConfig {
        num_people: 800,
        noise_rate: 0.0,
        ..SynthConfig::default()
    };
    let clean = synth::generate(&base).unwrap();
    let noisy = synth::generate(&SynthConfig { noise_rate: 0.05, ..base }).unwrap();
    let clean_set: HashSet<Triple> = clean.triples().iter().copied().collect();
    assert_eq!(&noisy.triples()[..clean.len()], clean.triples());
    let extra = &noisy.triples()[clean.len()..];
    assert_eq!(extra.len(), (0.05 * clean.len() as f64).round() as usize);
    for t in extra {
        assert!(!clean_set.contains(t));
        let (h, r, tl) = noisy.labels_of(t);
        assert!(h.starts_with("person_"));
        let want = match r {
            synth::WORKS_AS => "occupation_",
            synth::LIVES_IN => "location_",
            _ => "person_",
        };
        assert!(tl.starts_with(want), "{h} {r} {tl}");
    }
}

fn split_store() -> TripleStore {
    synth::generate(&SynthConfig::default()).unwrap().split([0.6, 0.2, 0.2], 3).unwrap()
}

#[test]
fn corruptions_are_counted_typed_and_absent_from_the_clean_graph() {
    let store = split_store();
    assert!(store.split_len(Split::Test) >= 9_000);
    let (corrupted, labels) = synth::inject_corruptions(&store, 0.01, 5).unwrap();
    assert_eq!(labels.len(), (0.01 * store.split_len(Split::Test) as f64).round() as usize);

    let clean: HashSet<Triple> = store.triples().iter().copied().collect();
    let types = TypeClasses::infer(&store);
    let mut kinds = HashSet::new();
    let mut seen = HashSet::new();
    for l in &labels {
        let bad = corrupted.triples()[l.triple_index];
        assert_eq!(store.triples()[l.triple_index], l.original);
        assert_eq!(corrupted.split_of(l.triple_index), Split::Test);
        assert!(!clean.contains(&bad));
        assert!(seen.insert(bad));
        assert_eq!(types.class_of(bad.head), types.class_of(l.original.head));
        assert_eq!(types.class_of(bad.tail), types.class_of(l.original.tail));
        let changed = [bad.head != l.original.head, bad.relation != l.original.relation, bad.tail != l.original.tail];
        assert_eq!(changed.iter().filter(|c| **c).count(), 1);
        let kind = match changed {
            [true, _, _] => CorruptionKind::HeadSwap,
            [_, true, _] => CorruptionKind::RelationSwap,
            _ => CorruptionKind::TailSwap,
        };
        assert_eq!(kind, l.kind);
        kinds.insert(kind);
    }
    assert_eq!(kinds.len(), 3);
    // untouched triples are untouched
    let touched: HashSet<usize> = labels.iter().map(|l| l.triple_index).collect();
    for i in 0..store.len() {
        if !touched.contains(&i) {
            assert_eq!(store.triples()[i], corrupted.triples()[i]);
        }
    }
    assert_eq!(synth::restore(&corrupted, &labels), store);
}

#[test]
fn labels_round_trip_through_csv() {
    let store = split_store();
    let (corrupted, labels) = synth::inject_corruptions(&store, 0.01, 6).unwrap();
    let mut buf = Vec::new();
    synth::write_labels(&mut buf, &corrupted, &labels).unwrap();
    assert_eq!(synth::read_labels(&buf[..], &corrupted).unwrap(), labels);
}

#[test]
fn corruption_fraction_must_be_a_proper_fraction() {
    let store = split_store();
    for f in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(synth::inject_corruptions(&store, f, 0).is_err());
    }
}
