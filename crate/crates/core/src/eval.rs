//! Rank-based link-prediction evaluation.
//!
//! Every test triple yields two queries, `(?, r, t)` and `(h, r, ?)`. The
//! rank of the true entity is computed against all entities, optionally
//! filtering out candidates that form another known triple.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Scalar, Side};
use crate::triples::{Split, Triple, TripleStore};

/// Anything that can score a triple and, optionally, a whole candidate row
/// at once.
pub trait CandidateScorer: Sync {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn score_triple(&self, t: &Triple) -> f64;

    /// Scores every entity in the open slot. `out.len() == num_entities()`.
    fn score_candidates(&self, side: Side, anchor: u32, relation: u32, out: &mut [f64]) {
        for (e, o) in out.iter_mut().enumerate() {
            let t = match side {
                Side::Tail => Triple::new(anchor, relation, e as u32),
                Side::Head => Triple::new(e as u32, relation, anchor),
            };
            *o = self.score_triple(&t);
        }
    }
}

impl<F: Scalar> CandidateScorer for EmbeddingModel<F> {
    fn num_entities(&self) -> usize {
        EmbeddingModel::num_entities(self)
    }

    fn num_relations(&self) -> usize {
        EmbeddingModel::num_relations(self)
    }

    fn score_triple(&self, t: &Triple) -> f64 {
        let mut ws = self.workspace();
        self.score_with(&mut ws, t)
    }

    fn score_candidates(&self, side: Side, anchor: u32, relation: u32, out: &mut [f64]) {
        let mut ws = self.workspace();
        EmbeddingModel::score_candidates(self, &mut ws, side, anchor, relation, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TieRule {
    Optimistic,
    Pessimistic,
    /// Mean of the optimistic and pessimistic ranks.
    #[default]
    Realistic,
}

impl TieRule {
    pub const ALL: [TieRule; 3] = [TieRule::Optimistic, TieRule::Pessimistic, TieRule::Realistic];

    pub fn name(self) -> &'static str {
        match self {
            TieRule::Optimistic => "optimistic",
            TieRule::Pessimistic => "pessimistic",
            TieRule::Realistic => "realistic",
        }
    }

    fn rank(self, greater: usize, equal: usize) -> f64 {
        match self {
            TieRule::Optimistic => 1.0 + greater as f64,
            TieRule::Pessimistic => 1.0 + (greater + equal) as f64,
            TieRule::Realistic => 1.0 + greater as f64 + equal as f64 / 2.0,
        }
    }
}

impl std::str::FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tie rule {s:?}")))
    }
}

/// Known true triples, indexed for filtered ranking.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
    heads: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut index = FilterIndex::default();
        let mut seen = HashSet::new();
        for t in triples {
            if seen.insert(*t) {
                index.tails.entry((t.head, t.relation)).or_default().push(t.tail);
                index.heads.entry((t.relation, t.tail)).or_default().push(t.head);
            }
        }
        index
    }

    /// Index over every triple of the store (train, valid and test).
    pub fn for_store(store: &TripleStore) -> Self {
        Self::new(store.triples())
    }

    /// Entities that complete the query into a known triple.
    pub fn known(&self, side: Side, anchor: u32, relation: u32) -> &[u32] {
        let hit = match side {
            Side::Tail => self.tails.get(&(anchor, relation)),
            Side::Head => self.heads.get(&(relation, anchor)),
        };
        hit.map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankOptions {
    pub filtered: bool,
    pub tie_rule: TieRule,
}

impl RankOptions {
    pub fn filtered() -> Self {
        Self {
            filtered: true,
            tie_rule: TieRule::Realistic,
        }
    }

    pub fn raw() -> Self {
        Self {
            filtered: false,
            tie_rule: TieRule::Realistic,
        }
    }
}

/// Per-query ranking outcome. Queries are ordered head-query then
/// tail-query for each triple, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ranks {
    pub triples: Vec<Triple>,
    pub sides: Vec<Side>,
    pub ranks: Vec<f64>,
    pub candidate_sizes: Vec<usize>,
}

impl Ranks {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Ranks and candidate sizes restricted to one side.
    pub fn side(&self, side: Side) -> (Vec<f64>, Vec<usize>) {
        self.sides
            .iter()
            .zip(self.ranks.iter().zip(&self.candidate_sizes))
            .filter(|(s, _)| **s == side)
            .map(|(_, (r, c))| (*r, *c))
            .unzip()
    }
}

/// Rank of the true entity for one query given a full candidate score row.
pub fn rank_in_row(scores: &[f64], truth: u32, known: &[u32], tie_rule: TieRule) -> (f64, usize) {
    let target = scores[truth as usize];
    let mut greater = 0usize;
    let mut equal = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if e as u32 == truth {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    let mut size = scores.len();
    for &k in known {
        if k == truth {
            continue;
        }
        size -= 1;
        let s = scores[k as usize];
        if s > target {
            greater -= 1;
        } else if s == target {
            equal -= 1;
        }
    }
    (tie_rule.rank(greater, equal), size)
}

fn check_ids<S: CandidateScorer + ?Sized>(scorer: &S, triples: &[Triple]) -> Result<()> {
    let (ne, nr) = (scorer.num_entities(), scorer.num_relations());
    let bad: Vec<String> = triples
        .iter()
        .filter(|t| t.head as usize >= ne || t.tail as usize >= ne || t.relation as usize >= nr)
        .take(10)
        .map(|t| format!("({}, {}, {})", t.head, t.relation, t.tail))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Index(format!("queries reference ids unknown to the model: {}", bad.join(", "))))
    }
}

/// Ranks both queries of every triple. `filter` supplies the known triples
/// for filtered ranking; `None` ranks against all entities.
pub fn rank_triples<S: CandidateScorer + ?Sized>(
    scorer: &S,
    triples: &[Triple],
    filter: Option<&FilterIndex>,
    tie_rule: TieRule,
) -> Result<Ranks> {
    check_ids(scorer, triples)?;
    let ne = scorer.num_entities();
    let per_query: Vec<(Triple, Side, f64, usize)> = triples
        .par_iter()
        .flat_map_iter(|t| [(*t, Side::Head), (*t, Side::Tail)])
        .map_init(
            || vec![0.0f64; ne],
            |row, (t, side)| {
                let (anchor, truth) = match side {
                    Side::Head => (t.tail, t.head),
                    Side::Tail => (t.head, t.tail),
                };
                scorer.score_candidates(side, anchor, t.relation, row);
                let known = filter.map_or(&[][..], |f| f.known(side, anchor, t.relation));
                let (rank, size) = rank_in_row(row, truth, known, tie_rule);
                (t, side, rank, size)
            },
        )
        .collect();

    let mut out = Ranks::default();
    for (t, side, rank, size) in per_query {
        out.triples.push(t);
        out.sides.push(side);
        out.ranks.push(rank);
        out.candidate_sizes.push(size);
    }
    Ok(out)
}

/// Ranks the queries of one split of `store`. Filtered mode removes every
/// known triple of the store (train, valid and test).
pub fn rank_queries<S: CandidateScorer + ?Sized>(
    scorer: &S,
    store: &TripleStore,
    split: Split,
    options: RankOptions,
) -> Result<Ranks> {
    let filter = options.filtered.then(|| FilterIndex::for_store(store));
    rank_triples(scorer, &store.split_triples(split), filter.as_ref(), options.tie_rule)
}

/// Fraction of queries ranked within the top `n`.
pub fn hits_at_n(ranks: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("HITS@N needs N >= 1".into()));
    }
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("HITS@N of an empty rank list"));
    }
    let hits = ranks.iter().filter(|r| **r <= n as f64).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Adjusted arithmetic mean rank index,
/// `1 - 2 * sum(rank - 1) / sum(|S| - 1)`: 1 for perfect ranking, 0 at
/// random expectation, -1 for the worst ranking.
pub fn amri(ranks: &[f64], candidate_sizes: &[usize]) -> Result<f64> {
    check_lengths(ranks, candidate_sizes)?;
    let denom: f64 = candidate_sizes.iter().map(|s| s.saturating_sub(1) as f64).sum();
    if denom == 0.0 {
        return Ok(1.0);
    }
    let num: f64 = ranks.iter().map(|r| r - 1.0).sum();
    Ok(1.0 - 2.0 * num / denom)
}

/// The index exactly as `2 * sum(rank - 1) / sum(|S|)`, without the
/// adjustment that maps it onto `[-1, 1]`.
pub fn amri_raw(ranks: &[f64], candidate_sizes: &[usize]) -> Result<f64> {
    check_lengths(ranks, candidate_sizes)?;
    let denom: f64 = candidate_sizes.iter().map(|s| *s as f64).sum();
    let num: f64 = ranks.iter().map(|r| r - 1.0).sum();
    Ok(2.0 * num / denom)
}

fn check_lengths(ranks: &[f64], sizes: &[usize]) -> Result<()> {
    if ranks.len() != sizes.len() {
        return Err(Error::Shape(format!("{} ranks but {} candidate sizes", ranks.len(), sizes.len())));
    }
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("AMRI of an empty rank list"));
    }
    Ok(())
}

/// Population standard deviation of the ranks.
pub fn rank_stddev(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("standard deviation of an empty rank list"));
    }
    let n = ranks.len() as f64;
    let mean = ranks.iter().sum::<f64>() / n;
    let var = ranks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

pub fn mean_rank(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("mean rank of an empty rank list"));
    }
    Ok(ranks.iter().sum::<f64>() / ranks.len() as f64)
}

pub fn mean_reciprocal_rank(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric("MRR of an empty rank list"));
    }
    Ok(ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64)
}

pub const HITS_LEVELS: [usize; 3] = [1, 5, 10];

/// Headline metrics for one set of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub queries: usize,
    pub hits: BTreeMap<usize, f64>,
    pub amri: f64,
    pub rank_stddev: f64,
    pub mean_rank: f64,
    pub mrr: f64,
}

impl MetricSummary {
    pub fn compute(ranks: &[f64], sizes: &[usize]) -> Result<Self> {
        let mut hits = BTreeMap::new();
        for n in HITS_LEVELS {
            hits.insert(n, hits_at_n(ranks, n)?);
        }
        Ok(Self {
            queries: ranks.len(),
            hits,
            amri: amri(ranks, sizes)?,
            rank_stddev: rank_stddev(ranks)?,
            mean_rank: mean_rank(ranks)?,
            mrr: mean_reciprocal_rank(ranks)?,
        })
    }

    pub fn hits_at(&self, n: usize) -> f64 {
        self.hits.get(&n).copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub ranks: Ranks,
    pub overall: MetricSummary,
    pub head: Option<MetricSummary>,
    pub tail: Option<MetricSummary>,
    pub amri_raw: f64,
    pub eval_seconds: f64,
    pub filtered: bool,
    pub tie_rule: TieRule,
}

impl RankingReport {
    pub fn hits_at(&self, n: usize) -> f64 {
        self.overall.hits_at(n)
    }

    /// `(metric, value)` pairs in a stable order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |prefix: &str, m: &MetricSummary| {
            for (n, v) in &m.hits {
                out.push((format!("{prefix}hits@{n}"), *v));
            }
            out.push((format!("{prefix}amri"), m.amri));
            out.push((format!("{prefix}rank_stddev"), m.rank_stddev));
            out.push((format!("{prefix}mean_rank"), m.mean_rank));
            out.push((format!("{prefix}mrr"), m.mrr));
            out.push((format!("{prefix}queries"), m.queries as f64));
        };
        push("", &self.overall);
        if let Some(h) = &self.head {
            push("head_", h);
        }
        if let Some(t) = &self.tail {
            push("tail_", t);
        }
        out.push(("amri_raw".into(), self.amri_raw));
        out.push(("eval_seconds".into(), self.eval_seconds));
        out
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "filtered = {}", self.filtered);
        let _ = writeln!(s, "tie_rule = {}", self.tie_rule.name());
        for (k, v) in self.metrics() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.metrics() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    /// One row per query: `head,relation,tail,side,rank,candidates`.
    pub fn ranks_csv(&self) -> String {
        let mut s = String::from("head,relation,tail,side,rank,candidates\n");
        let r = &self.ranks;
        for i in 0..r.len() {
            let t = r.triples[i];
            let side = if r.sides[i] == Side::Head { "head" } else { "tail" };
            let _ = writeln!(s, "{},{},{},{side},{},{}", t.head, t.relation, t.tail, r.ranks[i], r.candidate_sizes[i]);
        }
        s
    }
}

/// Ranks `triples` and assembles the report, timing the ranking.
pub fn evaluate_triples<S: CandidateScorer + ?Sized>(
    scorer: &S,
    triples: &[Triple],
    filter: Option<&FilterIndex>,
    tie_rule: TieRule,
) -> Result<RankingReport> {
    let start = Instant::now();
    let ranks = rank_triples(scorer, triples, filter, tie_rule)?;
    let eval_seconds = start.elapsed().as_secs_f64();
    let overall = MetricSummary::compute(&ranks.ranks, &ranks.candidate_sizes)?;
    let side = |s: Side| {
        let (r, c) = ranks.side(s);
        MetricSummary::compute(&r, &c).ok()
    };
    Ok(RankingReport {
        head: side(Side::Head),
        tail: side(Side::Tail),
        amri_raw: amri_raw(&ranks.ranks, &ranks.candidate_sizes)?,
        overall,
        eval_seconds,
        filtered: filter.is_some(),
        tie_rule,
        ranks,
    })
}

pub fn evaluate<S: CandidateScorer + ?Sized>(
    scorer: &S,
    store: &TripleStore,
    split: Split,
    options: RankOptions,
) -> Result<RankingReport> {
    let filter = options.filtered.then(|| FilterIndex::for_store(store));
    evaluate_triples(scorer, &store.split_triples(split), filter.as_ref(), options.tie_rule)
}

/// Baseline that ranks candidates by how often they fill the open slot of
/// the relation in the training split.
#[derive(Debug, Clone)]
pub struct RelationFrequencyScorer {
    num_entities: usize,
    num_relations: usize,
    as_head: HashMap<(u32, u32), u32>,
    as_tail: HashMap<(u32, u32), u32>,
}

impl RelationFrequencyScorer {
    pub fn fit(store: &TripleStore) -> Self {
        let mut as_head = HashMap::new();
        let mut as_tail = HashMap::new();
        for t in store.split_triples(Split::Train) {
            *as_head.entry((t.relation, t.head)).or_insert(0) += 1;
            *as_tail.entry((t.relation, t.tail)).or_insert(0) += 1;
        }
        Self {
            num_entities: store.num_entities(),
            num_relations: store.num_relations(),
            as_head,
            as_tail,
        }
    }
}

impl CandidateScorer for RelationFrequencyScorer {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn score_triple(&self, t: &Triple) -> f64 {
        self.as_tail.get(&(t.relation, t.tail)).copied().unwrap_or(0) as f64
    }

    fn score_candidates(&self, side: Side, _anchor: u32, relation: u32, out: &mut [f64]) {
        let counts = match side {
            Side::Tail => &self.as_tail,
            Side::Head => &self.as_head,
        };
        for (e, o) in out.iter_mut().enumerate() {
            *o = counts.get(&(relation, e as u32)).copied().unwrap_or(0) as f64;
        }
    }
}
