#![allow(dead_code)]

use edgekg_core::model::Scalar;
use edgekg_core::{EmbeddingModel, ModelKind, NormKind, Table, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random model with every table (TransR projections included) filled with
/// uniform noise.
pub fn random_model(kind: ModelKind, dim: usize, entities: usize, relations: usize, seed: u64) -> EmbeddingModel<f64> {
    let mut m = EmbeddingModel::<f64>::init(kind, dim, entities, relations, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    if kind.has_projection() {
        for v in m.table_mut(Table::Projection) {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

pub fn random_triples(rng: &mut impl Rng, n: usize, entities: usize, relations: usize) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..entities as u32),
                rng.gen_range(0..relations as u32),
                rng.gen_range(0..entities as u32),
            )
        })
        .collect()
}

fn dist(v: &[f64], norm: NormKind, complex: bool) -> f64 {
    match (norm, complex) {
        (NormKind::L1, false) => v.iter().map(|x| x.abs()).sum(),
        (NormKind::L1, true) => v.chunks(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).sum(),
        (NormKind::L2, _) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Direct transcription of each scoring formula, one triple at a time.
pub fn naive_score<F: Scalar>(m: &EmbeddingModel<F>, t: &Triple) -> f64 {
    let row = |table: Table, i: u32| -> Vec<f64> { m.row(table, i as usize).iter().map(|x| x.to_f64()).collect() };
    let h = row(Table::Entity, t.head);
    let r = row(Table::Relation, t.relation);
    let e = row(Table::Entity, t.tail);
    let d = m.dim();
    match m.kind() {
        ModelKind::TransE => {
            let v: Vec<f64> = (0..d).map(|i| h[i] + r[i] - e[i]).collect();
            -dist(&v, m.norm(), false)
        }
        ModelKind::TransR => {
            let p = row(Table::Projection, t.relation);
            let mv = |x: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| p[i * d + j] * x[j]).sum()).collect() };
            let (ph, pt) = (mv(&h), mv(&e));
            let v: Vec<f64> = (0..d).map(|i| ph[i] + r[i] - pt[i]).collect();
            -dist(&v, m.norm(), false)
        }
        ModelKind::DistMult => (0..d).map(|i| h[i] * r[i] * e[i]).sum(),
        ModelKind::ComplEx => (0..d)
            .map(|i| {
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                let (rr, ri) = (r[2 * i], r[2 * i + 1]);
                let (tr, ti) = (e[2 * i], e[2 * i + 1]);
                // Re((hr + i hi)(rr + i ri)(tr - i ti))
                let (ar, ai) = (hr * rr - hi * ri, hr * ri + hi * rr);
                ar * tr + ai * ti
            })
            .sum(),
        ModelKind::HolE => (0..d)
            .map(|k| r[k] * (0..d).map(|i| h[i] * e[(i + k) % d]).sum::<f64>())
            .sum(),
        ModelKind::RotatE => {
            let mut v = Vec::with_capacity(2 * d);
            for i in 0..d {
                let (c, s) = (r[i].cos(), r[i].sin());
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                v.push(hr * c - hi * s - e[2 * i]);
                v.push(hr * s + hi * c - e[2 * i + 1]);
            }
            -dist(&v, m.norm(), true)
        }
        ModelKind::PairRE => {
            let n = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let (nh, nt) = (n(&h), n(&e));
            let v: Vec<f64> = (0..d).map(|i| h[i] / nh * r[i] - e[i] / nt * r[d + i]).collect();
            -dist(&v, m.norm(), false)
        }
    }
}

/// Relative difference with a small absolute floor.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central difference of `f` at flat position `idx` of `table`.
pub fn central_difference(model: &mut EmbeddingModel<f64>, table: Table, idx: usize, step: f64, f: &dyn Fn(&EmbeddingModel<f64>) -> f64) -> f64 {
    let orig = model.table(table)[idx];
    model.table_mut(table)[idx] = orig + step;
    let up = f(model);
    model.table_mut(table)[idx] = orig - step;
    let down = f(model);
    model.table_mut(table)[idx] = orig;
    (up - down) / (2.0 * step)
}

/// Ranks of `truth` in `scores` by a full descending sort, with the three
/// tie conventions: (optimistic, pessimistic, realistic).
pub fn sort_rank(scores: &[(u32, f64)], truth: u32) -> (f64, f64, f64) {
    let mut sorted: Vec<(u32, f64)> = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let s = scores.iter().find(|(e, _)| *e == truth).unwrap().1;
    let first = sorted.iter().position(|(_, x)| *x == s).unwrap();
    let last = sorted.iter().rposition(|(_, x)| *x == s).unwrap();
    let opt = first as f64 + 1.0;
    let pess = last as f64 + 1.0;
    (opt, pess, (opt + pess) / 2.0)
}
