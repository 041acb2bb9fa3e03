//! Synthetic personnel-relations graph.
//!
//! People are generated in nuclear households: two spouses and a uniformly
//! drawn number of children. Rules close the family relations (spouse
//! symmetry, parent/child inverses, sibling cliques); every household shares
//! one location and the parents share a family trade drawn from a skewed
//! distribution. Children carry the `unknown` occupation, which makes it the
//! dominant class. Optional noise adds random type-consistent triples that no
//! rule produces.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::triples::{Dictionary, Split, Triple, TripleStore};

pub const SPOUSE_OF: &str = "spouse_of";
pub const PARENT_OF: &str = "parent_of";
pub const CHILD_OF: &str = "child_of";
pub const SIBLING_OF: &str = "sibling_of";
pub const WORKS_AS: &str = "works_as";
pub const LIVES_IN: &str = "lives_in";

pub const UNKNOWN_OCCUPATION: &str = "occupation_unknown";

/// Relation families the generator can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// `spouse_of` in both directions between the two parents.
    Spouse,
    /// `parent_of` from each parent to each child and its `child_of` inverse.
    ParentChild,
    /// `sibling_of` between every ordered pair of distinct children.
    Sibling,
    /// `works_as` for every person.
    WorksAs,
    /// `lives_in` for every person.
    LivesIn,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::Spouse, Rule::ParentChild, Rule::Sibling, Rule::WorksAs, Rule::LivesIn];
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_people: usize,
    /// Includes the `unknown` class.
    pub num_occupations: usize,
    pub num_locations: usize,
    /// Children per household, drawn uniformly from this inclusive range.
    pub children: (usize, usize),
    pub relation_rules: Vec<Rule>,
    /// Extra random triples as a fraction of the rule-derived count.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_people: 5000,
            num_occupations: 11,
            num_locations: 40,
            children: (4, 9),
            relation_rules: Rule::ALL.to_vec(),
            noise_rate: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn has(&self, rule: Rule) -> bool {
        self.relation_rules.contains(&rule)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        if self.num_people == 0 || self.num_occupations == 0 || self.num_locations == 0 {
            return fail("entity counts must be positive".into());
        }
        if self.children.0 > self.children.1 {
            return fail(format!("empty children range {:?}", self.children));
        }
        if self.relation_rules.is_empty() {
            return fail("no relation rules".into());
        }
        if self.num_people < 2 && (self.has(Rule::Spouse) || self.has(Rule::ParentChild)) {
            return fail("spouse and parent rules need at least 2 people".into());
        }
        if self.has(Rule::WorksAs) && self.num_occupations < 2 && self.num_people > 2 {
            return fail("works_as needs at least one trade besides unknown".into());
        }
        Ok(())
    }

    /// Keys accepted by [`SynthConfig::set`].
    pub const KEYS: [&'static str; 7] = [
        "num_people",
        "num_occupations",
        "num_locations",
        "min_children",
        "max_children",
        "noise_rate",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "num_people" => self.num_people = num(key, value)?,
            "num_occupations" => self.num_occupations = num(key, value)?,
            "num_locations" => self.num_locations = num(key, value)?,
            "min_children" => self.children.0 = num(key, value)?,
            "max_children" => self.children.1 = num(key, value)?,
            "noise_rate" => self.noise_rate = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown synth key {key:?}"))),
        }
        Ok(())
    }
}

fn person_label(i: usize) -> String {
    format!("person_{i:05}")
}

fn occupation_label(i: usize) -> String {
    if i == 0 {
        UNKNOWN_OCCUPATION.to_owned()
    } else {
        format!("occupation_{i:02}")
    }
}

fn location_label(i: usize) -> String {
    format!("location_{i:03}")
}

/// Generates the graph. Every triple starts in the train split.
pub fn generate(config: &SynthConfig) -> Result<TripleStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut entities = Dictionary::new();
    for i in 0..config.num_people {
        entities.intern(&person_label(i));
    }
    let occupation0 = entities.len() as u32;
    for i in 0..config.num_occupations {
        entities.intern(&occupation_label(i));
    }
    let location0 = entities.len() as u32;
    for i in 0..config.num_locations {
        entities.intern(&location_label(i));
    }
    let mut relations = Dictionary::new();
    let rel = |relations: &mut Dictionary, rule: Rule, name: &str| config.has(rule).then(|| relations.intern(name));
    let spouse = rel(&mut relations, Rule::Spouse, SPOUSE_OF);
    let parent = rel(&mut relations, Rule::ParentChild, PARENT_OF);
    let child = rel(&mut relations, Rule::ParentChild, CHILD_OF);
    let sibling = rel(&mut relations, Rule::Sibling, SIBLING_OF);
    let works = rel(&mut relations, Rule::WorksAs, WORKS_AS);
    let lives = rel(&mut relations, Rule::LivesIn, LIVES_IN);

    // trades 1..n weighted 1/k; index 0 (unknown) is reserved for children
    let trades = config.num_occupations.saturating_sub(1);
    let trade_dist = (trades > 0)
        .then(|| WeightedIndex::new((1..=trades).map(|k| 1.0 / k as f64)).expect("positive weights"));

    let mut triples = Vec::new();
    let mut next = 0usize;
    while next < config.num_people {
        let kids = rng.gen_range(config.children.0..=config.children.1);
        let size = (2 + kids).min(config.num_people - next);
        let members: Vec<u32> = (next..next + size).map(|p| p as u32).collect();
        next += size;
        let (parents, children) = members.split_at(members.len().min(2));
        let location = location0 + rng.gen_range(0..config.num_locations) as u32;
        let trade = trade_dist.as_ref().map_or(0, |d| 1 + d.sample(&mut rng)) as u32;

        if let (Some(r), [a, b]) = (spouse, parents) {
            triples.push(Triple::new(*a, r, *b));
            triples.push(Triple::new(*b, r, *a));
        }
        if let (Some(p), Some(c)) = (parent, child) {
            for &kid in children {
                for &par in parents {
                    triples.push(Triple::new(par, p, kid));
                    triples.push(Triple::new(kid, c, par));
                }
            }
        }
        if let Some(r) = sibling {
            for &a in children {
                for &b in children {
                    if a != b {
                        triples.push(Triple::new(a, r, b));
                    }
                }
            }
        }
        if let Some(r) = works {
            for &par in parents {
                triples.push(Triple::new(par, r, occupation0 + trade));
            }
            for &kid in children {
                triples.push(Triple::new(kid, r, occupation0));
            }
        }
        if let Some(r) = lives {
            for &m in &members {
                triples.push(Triple::new(m, r, location));
            }
        }
    }

    let noise = (config.noise_rate * triples.len() as f64).round() as usize;
    if noise > 0 {
        add_noise(&mut triples, noise, config, &relations, occupation0, location0, &mut rng)?;
    }
    TripleStore::from_parts(triples, entities, relations)
}

fn add_noise(
    triples: &mut Vec<Triple>,
    count: usize,
    config: &SynthConfig,
    relations: &Dictionary,
    occupation0: u32,
    location0: u32,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let people = config.num_people as u32;
    let mut seen: HashSet<Triple> = triples.iter().copied().collect();
    let mut added = 0;
    let mut attempts = 0usize;
    while added < count {
        attempts += 1;
        if attempts > 100 * count + 1000 {
            return Err(Error::Generation(format!("could only place {added} of {count} noise triples")));
        }
        let r = rng.gen_range(0..relations.len()) as u32;
        let head = rng.gen_range(0..people);
        let tail = match relations.label(r) {
            Some(WORKS_AS) => occupation0 + rng.gen_range(0..config.num_occupations) as u32,
            Some(LIVES_IN) => location0 + rng.gen_range(0..config.num_locations) as u32,
            _ => rng.gen_range(0..people),
        };
        let t = Triple::new(head, r, tail);
        if head != tail && seen.insert(t) {
            triples.push(t);
            added += 1;
        }
    }
    Ok(())
}

/// Closed-form expected number of rule-derived triples (no noise), treating
/// the population as whole households of expected size.
pub fn expected_triples(config: &SynthConfig) -> f64 {
    let (lo, hi) = config.children;
    let n = (hi - lo + 1) as f64;
    let e_c = (lo..=hi).map(|c| c as f64).sum::<f64>() / n;
    let e_c2 = (lo..=hi).map(|c| (c * c) as f64).sum::<f64>() / n;
    let mut per_family = 0.0;
    if config.has(Rule::Spouse) {
        per_family += 2.0;
    }
    if config.has(Rule::ParentChild) {
        per_family += 4.0 * e_c;
    }
    if config.has(Rule::Sibling) {
        per_family += e_c2 - e_c;
    }
    for rule in [Rule::WorksAs, Rule::LivesIn] {
        if config.has(rule) {
            per_family += 2.0 + e_c;
        }
    }
    config.num_people as f64 * per_family / (2.0 + e_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    HeadSwap,
    TailSwap,
    RelationSwap,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [CorruptionKind::HeadSwap, CorruptionKind::TailSwap, CorruptionKind::RelationSwap];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::HeadSwap => "head-swap",
            CorruptionKind::TailSwap => "tail-swap",
            CorruptionKind::RelationSwap => "relation-swap",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown corruption kind {s:?}")))
    }
}

/// Ground truth for one planted corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionLabel {
    pub triple_index: usize,
    pub kind: CorruptionKind,
    pub original: Triple,
}

/// Entity type classes inferred from the graph: entities filling the same
/// slot of the same relation share a class (union-find over slots).
#[derive(Debug, Clone)]
pub struct TypeClasses {
    /// `u32::MAX` for entities that occur in no triple.
    class_of: Vec<u32>,
    members: Vec<Vec<u32>>,
    /// `(head class, tail class)` per relation, `None` for unused relations.
    signature: Vec<Option<(u32, u32)>>,
}

impl TypeClasses {
    pub fn infer(store: &TripleStore) -> Self {
        let n = store.num_entities();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut first: Vec<[Option<usize>; 2]> = vec![[None, None]; store.num_relations()];
        let mut used = vec![false; n];
        for t in store.triples() {
            for (slot, e) in [(0, t.head as usize), (1, t.tail as usize)] {
                used[e] = true;
                match first[t.relation as usize][slot] {
                    None => first[t.relation as usize][slot] = Some(e),
                    Some(f) => {
                        let (a, b) = (find(&mut parent, f), find(&mut parent, e));
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut class_id = vec![u32::MAX; n];
        let mut class_of = vec![u32::MAX; n];
        let mut members: Vec<Vec<u32>> = Vec::new();
        for e in (0..n).filter(|&e| used[e]) {
            let root = find(&mut parent, e);
            if class_id[root] == u32::MAX {
                class_id[root] = members.len() as u32;
                members.push(Vec::new());
            }
            class_of[e] = class_id[root];
            members[class_id[root] as usize].push(e as u32);
        }
        let signature = first
            .iter()
            .map(|slots| match slots {
                [Some(h), Some(t)] => Some((class_of[*h], class_of[*t])),
                _ => None,
            })
            .collect();
        Self {
            class_of,
            members,
            signature,
        }
    }

    pub fn class_of(&self, entity: u32) -> Option<u32> {
        self.class_of.get(entity as usize).copied().filter(|&c| c != u32::MAX)
    }

    pub fn members(&self, class: u32) -> &[u32] {
        &self.members[class as usize]
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    /// Relations other than `relation` sharing its type signature.
    pub fn compatible_relations(&self, relation: u32) -> Vec<u32> {
        let Some(sig) = self.signature[relation as usize] else { return Vec::new() };
        (0..self.signature.len() as u32)
            .filter(|&r| r != relation && self.signature[r as usize] == Some(sig))
            .collect()
    }
}

const CORRUPTION_RETRIES: usize = 64;

/// Corrupts `round(fraction * |test|)` test triples, chosen by a seeded
/// shuffle. Each corruption swaps the head, the tail or the relation for a
/// uniformly drawn same-type replacement and never collides with a triple of
/// the clean store or with another corruption.
pub fn inject_corruptions(store: &TripleStore, fraction: f64, seed: u64) -> Result<(TripleStore, Vec<CorruptionLabel>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("corruption fraction {fraction} outside (0, 1)")));
    }
    let mut test = store.split_indices(Split::Test);
    let count = (fraction * test.len() as f64).round() as usize;
    let mut out = store.clone();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let types = TypeClasses::infer(store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    test.shuffle(&mut rng);
    test.truncate(count);
    test.sort_unstable();

    let mut occupied: HashSet<Triple> = store.triples().iter().copied().collect();
    let mut labels = Vec::with_capacity(count);
    for index in test {
        let original = store.triples()[index];
        let (kind, corrupted) = corrupt_one(&original, &types, &occupied, &mut rng).ok_or_else(|| {
            Error::Generation(format!("no non-colliding corruption for triple {index} after {CORRUPTION_RETRIES} attempts"))
        })?;
        occupied.insert(corrupted);
        out.replace_triple(index, corrupted);
        labels.push(CorruptionLabel {
            triple_index: index,
            kind,
            original,
        });
    }
    Ok((out, labels))
}

fn corrupt_one<R: Rng>(t: &Triple, types: &TypeClasses, occupied: &HashSet<Triple>, rng: &mut R) -> Option<(CorruptionKind, Triple)> {
    let relations = types.compatible_relations(t.relation);
    let heads = types.class_of(t.head).map_or(&[][..], |c| types.members(c));
    let tails = types.class_of(t.tail).map_or(&[][..], |c| types.members(c));
    let mut kinds = Vec::with_capacity(3);
    if heads.len() > 1 {
        kinds.push(CorruptionKind::HeadSwap);
    }
    if tails.len() > 1 {
        kinds.push(CorruptionKind::TailSwap);
    }
    if !relations.is_empty() {
        kinds.push(CorruptionKind::RelationSwap);
    }
    if kinds.is_empty() {
        return None;
    }
    let preferred = CorruptionKind::ALL[rng.gen_range(0..3)];
    for attempt in 0..CORRUPTION_RETRIES {
        // keep the drawn kind when feasible, otherwise fall back to another
        let kind = if kinds.contains(&preferred) && attempt < CORRUPTION_RETRIES / 2 {
            preferred
        } else {
            kinds[rng.gen_range(0..kinds.len())]
        };
        let candidate = match kind {
            CorruptionKind::HeadSwap => Triple::new(pick_other(heads, t.head, rng), t.relation, t.tail),
            CorruptionKind::TailSwap => Triple::new(t.head, t.relation, pick_other(tails, t.tail, rng)),
            CorruptionKind::RelationSwap => Triple::new(t.head, relations[rng.gen_range(0..relations.len())], t.tail),
        };
        if !occupied.contains(&candidate) {
            return Some((kind, candidate));
        }
    }
    None
}

fn pick_other<R: Rng>(pool: &[u32], current: u32, rng: &mut R) -> u32 {
    loop {
        let e = pool[rng.gen_range(0..pool.len())];
        if e != current {
            return e;
        }
    }
}

/// Writes labels as CSV `index,kind,orig_head,orig_rel,orig_tail` with the
/// original triple spelled in labels.
pub fn write_labels<W: Write>(out: W, store: &TripleStore, labels: &[CorruptionLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["index", "kind", "orig_head", "orig_rel", "orig_tail"]).map_err(wrap)?;
    for l in labels {
        let (h, r, t) = store.labels_of(&l.original);
        w.write_record([l.triple_index.to_string().as_str(), l.kind.name(), h, r, t])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<labels>", e))
}

pub fn read_labels<R: Read>(input: R, store: &TripleStore) -> Result<Vec<CorruptionLabel>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse {
            line,
            message: "expected 5 fields".into(),
        });
        let triple_index = field(0)?.parse().map_err(|_| Error::Parse {
            line,
            message: "bad index".into(),
        })?;
        let kind = field(1)?.parse()?;
        let original = resolve(store, field(2)?, field(3)?, field(4)?, line)?;
        labels.push(CorruptionLabel {
            triple_index,
            kind,
            original,
        });
    }
    Ok(labels)
}

fn resolve(store: &TripleStore, h: &str, r: &str, t: &str, line: usize) -> Result<Triple> {
    let missing = |what: &str| Error::Parse {
        line,
        message: format!("unknown {what}"),
    };
    Ok(Triple::new(
        store.entities().id(h).ok_or_else(|| missing("head"))?,
        store.relations().id(r).ok_or_else(|| missing("relation"))?,
        store.entities().id(t).ok_or_else(|| missing("tail"))?,
    ))
}

/// Restores the clean store from a corrupted one and its labels.
pub fn restore(store: &TripleStore, labels: &[CorruptionLabel]) -> TripleStore {
    let mut out = store.clone();
    for l in labels {
        out.replace_triple(l.triple_index, l.original);
    }
    out
}
