//! Data-quality assessment by score standardization.
//!
//! Triples are scored with a trained model, scores are turned into z-scores
//! `z = (x - mu) / sigma` and records below a threshold (default -1) are
//! flagged for manual review. The distribution is either fitted on the batch
//! itself or frozen from a trusted reference batch.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Write;

use crate::config;
use crate::error::{Error, Result};
use crate::eval::CandidateScorer;
use crate::triples::Triple;

pub const DEFAULT_THRESHOLD: f64 = -1.0;

/// Mean and population standard deviation of a score sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDistribution {
    pub mean: f64,
    pub stddev: f64,
    pub n: usize,
}

impl ScoreDistribution {
    pub fn z(&self, score: f64) -> f64 {
        (score - self.mean) / self.stddev
    }

    pub fn to_key_value(&self) -> String {
        format!("mean = {}\nstddev = {}\nn = {}\n", self.mean, self.stddev, self.n)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = config::parse_kv(text)?;
        let get = |k: &str| config::lookup(&pairs, k).ok_or_else(|| Error::Format(format!("reference distribution lacks {k}")));
        let bad = |k: &str| Error::Format(format!("invalid {k} in reference distribution"));
        let mean: f64 = get("mean")?.parse().map_err(|_| bad("mean"))?;
        let stddev: f64 = get("stddev")?.parse().map_err(|_| bad("stddev"))?;
        let n: usize = get("n")?.parse().map_err(|_| bad("n"))?;
        if !mean.is_finite() || !stddev.is_finite() || stddev < 0.0 || n == 0 {
            return Err(Error::Format("reference distribution out of range".into()));
        }
        if stddev == 0.0 {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self { mean, stddev, n })
    }
}

/// Fits mean and population standard deviation (two passes).
pub fn fit_distribution(scores: &[f64]) -> Result<ScoreDistribution> {
    if scores.len() < 2 {
        return Err(Error::Shape(format!("need at least 2 scores, got {}", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Shape("non-finite score".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let stddev = var.sqrt();
    if stddev == 0.0 || !stddev.is_normal() {
        return Err(Error::DegenerateDistribution);
    }
    Ok(ScoreDistribution {
        mean,
        stddev,
        n: scores.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagReason {
    LowZ,
    OutOfVocabulary,
}

impl FlagReason {
    pub fn name(self) -> &'static str {
        match self {
            FlagReason::LowZ => "low-z",
            FlagReason::OutOfVocabulary => "out-of-vocabulary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyRecord {
    /// Position in the assessed batch.
    pub index: usize,
    pub triple: Triple,
    /// `None` for out-of-vocabulary records.
    pub score: Option<f64>,
    pub z: Option<f64>,
    pub flagged: bool,
    pub reason: Option<FlagReason>,
}

/// Where the standardizing distribution comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMode {
    /// One distribution over the whole batch.
    #[default]
    Global,
    /// One distribution per relation; relations with fewer than two
    /// in-vocabulary scores (or constant scores) fall back to the global fit.
    PerRelation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    /// Ascending by z; out-of-vocabulary records first; ties by index.
    pub records: Vec<AnomalyRecord>,
    /// Global distribution; `None` only for an empty streaming batch.
    pub distribution: Option<ScoreDistribution>,
    pub threshold: f64,
}

impl AnomalyReport {
    pub fn flagged(&self) -> impl Iterator<Item = &AnomalyRecord> {
        self.records.iter().filter(|r| r.flagged)
    }

    pub fn num_flagged(&self) -> usize {
        self.flagged().count()
    }

    /// Fraction of `positives` (batch indices) that were flagged.
    pub fn recall(&self, positives: &[usize]) -> Option<f64> {
        if positives.is_empty() {
            return None;
        }
        let flagged: std::collections::HashSet<usize> = self.flagged().map(|r| r.index).collect();
        let hit = positives.iter().filter(|i| flagged.contains(i)).count();
        Some(hit as f64 / positives.len() as f64)
    }

    /// CSV `head,relation,tail,score,z,flagged,reason`; `labels` spells the
    /// record at a batch index.
    pub fn write_csv<W: Write>(&self, out: W, labels: impl Fn(&AnomalyRecord) -> [String; 3]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["head", "relation", "tail", "score", "z", "flagged", "reason"]).map_err(wrap)?;
        for r in &self.records {
            let [h, rel, t] = labels(r);
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                h,
                rel,
                t,
                opt(r.score),
                opt(r.z),
                r.flagged.to_string(),
                r.reason.map(|x| x.name().to_owned()).unwrap_or_default(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "records = {}", self.records.len());
        let _ = writeln!(s, "flagged = {}", self.num_flagged());
        let _ = writeln!(s, "threshold = {}", self.threshold);
        if let Some(d) = self.distribution {
            let _ = write!(s, "{}", d.to_key_value());
        }
        s
    }
}

fn covers<S: CandidateScorer + ?Sized>(model: &S, t: &Triple) -> bool {
    (t.head as usize) < model.num_entities() && (t.tail as usize) < model.num_entities() && (t.relation as usize) < model.num_relations()
}

/// Scores of the in-vocabulary triples; `None` for the others.
pub fn score_batch<S: CandidateScorer + ?Sized>(model: &S, batch: &[Triple]) -> Vec<Option<f64>> {
    batch
        .iter()
        .map(|t| covers(model, t).then(|| model.score_triple(t)))
        .collect()
}

/// Self-fit assessment: the batch provides its own distribution.
pub fn assess<S: CandidateScorer + ?Sized>(model: &S, batch: &[Triple], threshold: f64, mode: FitMode) -> Result<AnomalyReport> {
    let scores = score_batch(model, batch);
    assess_scores(batch, &scores, None, threshold, mode)
}

/// Assessment against a frozen reference distribution.
pub fn assess_streaming<S: CandidateScorer + ?Sized>(
    model: &S,
    reference: &ScoreDistribution,
    batch: &[Triple],
    threshold: f64,
) -> Result<AnomalyReport> {
    let scores = score_batch(model, batch);
    assess_scores(batch, &scores, Some(reference), threshold, FitMode::Global)
}

/// Builds a report from precomputed scores (`None` = out of vocabulary).
/// Without a reference the distribution is fitted on the known scores.
pub fn assess_scores(
    batch: &[Triple],
    scores: &[Option<f64>],
    reference: Option<&ScoreDistribution>,
    threshold: f64,
    mode: FitMode,
) -> Result<AnomalyReport> {
    if batch.len() != scores.len() {
        return Err(Error::Shape(format!("{} scores for {} triples", scores.len(), batch.len())));
    }
    if !threshold.is_finite() {
        return Err(Error::Config("threshold must be finite".into()));
    }
    let known: Vec<f64> = scores.iter().flatten().copied().collect();
    let global = match reference {
        Some(r) => Some(*r),
        None if batch.is_empty() => None,
        None => Some(fit_distribution(&known)?),
    };
    let per_relation = match (mode, reference) {
        (FitMode::PerRelation, None) => Some(fit_per_relation(batch, scores)),
        _ => None,
    };

    let mut records: Vec<AnomalyRecord> = batch
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(index, (triple, score))| match score {
            None => AnomalyRecord {
                index,
                triple: *triple,
                score: None,
                z: None,
                flagged: true,
                reason: Some(FlagReason::OutOfVocabulary),
            },
            Some(x) => {
                let dist = per_relation
                    .as_ref()
                    .and_then(|m| m.get(&triple.relation).copied())
                    .or(global)
                    .expect("a distribution exists whenever a score does");
                let z = dist.z(*x);
                let flagged = z < threshold;
                AnomalyRecord {
                    index,
                    triple: *triple,
                    score: Some(*x),
                    z: Some(z),
                    flagged,
                    reason: flagged.then_some(FlagReason::LowZ),
                }
            }
        })
        .collect();
    records.sort_by(|a, b| match (a.z, b.z) {
        (None, None) => a.index.cmp(&b.index),
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.index.cmp(&b.index)),
    });
    Ok(AnomalyReport {
        records,
        distribution: global,
        threshold,
    })
}

fn fit_per_relation(batch: &[Triple], scores: &[Option<f64>]) -> std::collections::HashMap<u32, ScoreDistribution> {
    let mut groups: std::collections::BTreeMap<u32, Vec<f64>> = Default::default();
    for (t, s) in batch.iter().zip(scores) {
        if let Some(s) = s {
            groups.entry(t.relation).or_default().push(*s);
        }
    }
    groups
        .into_iter()
        .filter_map(|(r, s)| fit_distribution(&s).ok().map(|d| (r, d)))
        .collect()
}
