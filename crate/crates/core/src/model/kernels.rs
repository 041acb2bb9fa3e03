//! Scoring arithmetic. Rows are widened to `f64` into a reusable
//! [`Workspace`] before any math runs.
//!
//! Layouts: complex vectors (ComplEx and RotatE entities, ComplEx
//! relations) interleave `(re, im)` per dimension; PairRE relations are
//! `r_head ++ r_tail`; TransR projections are row-major `dim x dim`.

use super::{EmbeddingModel, ModelKind, NormKind, Scalar, Side, Table};
use crate::triples::Triple;

/// Scratch buffers reused across scoring and gradient calls.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub(crate) h: Vec<f64>,
    pub(crate) r: Vec<f64>,
    pub(crate) t: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) gh: Vec<f64>,
    pub(crate) gr: Vec<f64>,
    pub(crate) gt: Vec<f64>,
    pub(crate) gm: Vec<f64>,
    q: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
    g: Vec<f64>,
    cand_scale: Vec<f64>,
}

impl Workspace {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        let ew = kind.entity_width(dim);
        let rw = kind.relation_width(dim);
        let mw = if kind.has_projection() { dim * dim } else { 0 };
        Self {
            h: vec![0.0; ew],
            r: vec![0.0; rw],
            t: vec![0.0; ew],
            m: vec![0.0; mw],
            gh: vec![0.0; ew],
            gr: vec![0.0; rw],
            gt: vec![0.0; ew],
            gm: vec![0.0; mw],
            q: vec![0.0; ew],
            x: vec![0.0; ew],
            v: vec![0.0; ew],
            g: vec![0.0; ew],
            cand_scale: vec![0.0; ew],
        }
    }
}

#[inline]
fn load<F: Scalar>(dst: &mut [f64], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = s.to_f64();
    }
}

fn load_row<F: Scalar>(model: &EmbeddingModel<F>, table: Table, row: usize, dst: &mut [f64]) {
    load(dst, model.row(table, row));
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc[0] += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `-||q - x||` under the given norm. With `complex`, L1 sums the moduli of
/// the `(re, im)` pairs.
#[inline]
fn neg_distance(q: &[f64], x: &[f64], norm: NormKind, complex: bool) -> f64 {
    match (norm, complex) {
        (NormKind::L1, false) => {
            let mut acc = [0.0f64; 4];
            let mut cq = q.chunks_exact(4);
            let mut cx = x.chunks_exact(4);
            for (a, b) in (&mut cq).zip(&mut cx) {
                for j in 0..4 {
                    acc[j] += (a[j] - b[j]).abs();
                }
            }
            for (a, b) in cq.remainder().iter().zip(cx.remainder()) {
                acc[0] += (a - b).abs();
            }
            -((acc[0] + acc[1]) + (acc[2] + acc[3]))
        }
        (NormKind::L1, true) => {
            let mut acc = [0.0f64; 4];
            let mut cq = q.chunks_exact(8);
            let mut cx = x.chunks_exact(8);
            for (a, b) in (&mut cq).zip(&mut cx) {
                for j in 0..4 {
                    let re = a[2 * j] - b[2 * j];
                    let im = a[2 * j + 1] - b[2 * j + 1];
                    acc[j] += (re * re + im * im).sqrt();
                }
            }
            for (a, b) in cq.remainder().chunks_exact(2).zip(cx.remainder().chunks_exact(2)) {
                let re = a[0] - b[0];
                let im = a[1] - b[1];
                acc[0] += (re * re + im * im).sqrt();
            }
            -((acc[0] + acc[1]) + (acc[2] + acc[3]))
        }
        (NormKind::L2, _) => {
            let mut acc = [0.0f64; 4];
            let mut cq = q.chunks_exact(4);
            let mut cx = x.chunks_exact(4);
            for (a, b) in (&mut cq).zip(&mut cx) {
                for j in 0..4 {
                    let d = a[j] - b[j];
                    acc[j] += d * d;
                }
            }
            for (a, b) in cq.remainder().iter().zip(cx.remainder()) {
                let d = a - b;
                acc[0] += d * d;
            }
            -((acc[0] + acc[1]) + (acc[2] + acc[3])).sqrt()
        }
    }
}

/// Score `-||v||` and its gradient with respect to `v` written into `g`.
/// At kinks (zero components or a zero vector) the zero subgradient is used.
fn neg_norm_backward(v: &[f64], norm: NormKind, complex: bool, g: &mut [f64]) -> f64 {
    match (norm, complex) {
        (NormKind::L1, false) => {
            let mut s = 0.0;
            for (gi, vi) in g.iter_mut().zip(v) {
                s += vi.abs();
                *gi = if *vi > 0.0 {
                    -1.0
                } else if *vi < 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
            -s
        }
        (NormKind::L1, true) => {
            let mut s = 0.0;
            for (gi, vi) in g.chunks_exact_mut(2).zip(v.chunks_exact(2)) {
                let m = (vi[0] * vi[0] + vi[1] * vi[1]).sqrt();
                s += m;
                if m > 0.0 {
                    gi[0] = -vi[0] / m;
                    gi[1] = -vi[1] / m;
                } else {
                    gi[0] = 0.0;
                    gi[1] = 0.0;
                }
            }
            -s
        }
        (NormKind::L2, _) => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi = if n > 0.0 { -vi / n } else { 0.0 };
            }
            -n
        }
    }
}

/// `out = M x` with `M` row-major `d x d`.
fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * d..(i + 1) * d], x);
    }
}

/// Writes `x / ||x||_2` into `out` and returns `||x||_2`.
fn normalize(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (o, v) in out.iter_mut().zip(x) {
        *o = if n > 0.0 { v / n } else { 0.0 };
    }
    n
}

fn is_complex(kind: ModelKind) -> bool {
    matches!(kind, ModelKind::ComplEx | ModelKind::RotatE)
}

/// Fills `ws.q` (and any per-candidate transform state) for a query whose
/// open slot is `side`.
fn prepare_query<F: Scalar>(model: &EmbeddingModel<F>, ws: &mut Workspace, side: Side, anchor: usize, rel: usize) {
    let d = model.dim();
    load_row(model, Table::Relation, rel, &mut ws.r);
    let Workspace {
        h, r, m, q, x, cand_scale, ..
    } = ws;
    // `h` holds the anchor entity whichever side it sits on
    load_row(model, Table::Entity, anchor, h);
    match (model.kind(), side) {
        (ModelKind::TransE, Side::Tail) => {
            for i in 0..d {
                q[i] = h[i] + r[i];
            }
        }
        (ModelKind::TransE, Side::Head) => {
            for i in 0..d {
                q[i] = h[i] - r[i];
            }
        }
        (ModelKind::TransR, _) => {
            load_row(model, Table::Projection, rel, m);
            matvec(m, h, x);
            let sign = if side == Side::Tail { 1.0 } else { -1.0 };
            for i in 0..d {
                q[i] = x[i] + sign * r[i];
            }
        }
        (ModelKind::DistMult, _) => {
            for i in 0..d {
                q[i] = h[i] * r[i];
            }
        }
        (ModelKind::ComplEx, Side::Tail) => {
            // q = h * r; score = Re(<q, conj(t)>) = q_re t_re + q_im t_im
            for i in 0..d {
                let (hr, hi, rr, ri) = (h[2 * i], h[2 * i + 1], r[2 * i], r[2 * i + 1]);
                q[2 * i] = hr * rr - hi * ri;
                q[2 * i + 1] = hr * ri + hi * rr;
            }
        }
        (ModelKind::ComplEx, Side::Head) => {
            // u = r * conj(t); score = Re(h u) = h_re u_re - h_im u_im
            for i in 0..d {
                let (tr, ti, rr, ri) = (h[2 * i], h[2 * i + 1], r[2 * i], r[2 * i + 1]);
                let ure = rr * tr + ri * ti;
                let uim = ri * tr - rr * ti;
                q[2 * i] = ure;
                q[2 * i + 1] = -uim;
            }
        }
        (ModelKind::HolE, Side::Tail) => {
            // score = sum_j t_j sum_k r_k h_{j-k}
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += r[k] * h[(j + d - k) % d];
                }
                q[j] = s;
            }
        }
        (ModelKind::HolE, Side::Head) => {
            // score = sum_i h_i sum_k r_k t_{i+k}
            for i in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += r[k] * h[(i + k) % d];
                }
                q[i] = s;
            }
        }
        (ModelKind::RotatE, _) => {
            let sign = if side == Side::Tail { 1.0 } else { -1.0 };
            for i in 0..d {
                let (c, s) = (r[i].cos(), sign * r[i].sin());
                let (re, im) = (h[2 * i], h[2 * i + 1]);
                q[2 * i] = re * c - im * s;
                q[2 * i + 1] = re * s + im * c;
            }
        }
        (ModelKind::PairRE, _) => {
            let (own, other) = match side {
                Side::Tail => (&r[..d], &r[d..]),
                Side::Head => (&r[d..], &r[..d]),
            };
            normalize(h, x);
            for i in 0..d {
                q[i] = x[i] * own[i];
            }
            cand_scale[..d].copy_from_slice(other);
        }
    }
}

/// Scores candidate entity `e` against the prepared query.
#[inline]
fn candidate<F: Scalar>(model: &EmbeddingModel<F>, ws: &mut Workspace, e: usize) -> f64 {
    let kind = model.kind();
    let d = model.dim();
    let Workspace {
        t, m, q, x, cand_scale, ..
    } = ws;
    load_row(model, Table::Entity, e, t);
    match kind {
        ModelKind::TransE | ModelKind::RotatE => neg_distance(q, t, model.norm(), is_complex(kind)),
        ModelKind::TransR => {
            matvec(m, t, x);
            neg_distance(q, x, model.norm(), false)
        }
        ModelKind::PairRE => {
            normalize(t, x);
            for i in 0..d {
                x[i] *= cand_scale[i];
            }
            neg_distance(q, &x[..d], model.norm(), false)
        }
        ModelKind::DistMult | ModelKind::ComplEx | ModelKind::HolE => dot(q, t),
    }
}

pub(super) fn score_one<F: Scalar>(model: &EmbeddingModel<F>, ws: &mut Workspace, t: &Triple) -> f64 {
    prepare_query(model, ws, Side::Tail, t.head as usize, t.relation as usize);
    candidate(model, ws, t.tail as usize)
}

pub(super) fn score_candidates<F: Scalar>(
    model: &EmbeddingModel<F>,
    ws: &mut Workspace,
    side: Side,
    anchor: u32,
    relation: u32,
    out: &mut [f64],
) {
    prepare_query(model, ws, side, anchor as usize, relation as usize);
    for (e, o) in out.iter_mut().enumerate().take(model.num_entities()) {
        *o = candidate(model, ws, e);
    }
}

/// Computes the score of `t` and its partial derivatives, overwriting
/// `ws.gh`, `ws.gr`, `ws.gt` (and `ws.gm` for TransR).
pub(super) fn backward<F: Scalar>(model: &EmbeddingModel<F>, ws: &mut Workspace, tr: &Triple) -> f64 {
    let d = model.dim();
    let norm = model.norm();
    load_row(model, Table::Entity, tr.head as usize, &mut ws.h);
    load_row(model, Table::Relation, tr.relation as usize, &mut ws.r);
    load_row(model, Table::Entity, tr.tail as usize, &mut ws.t);
    let Workspace {
        h,
        r,
        t,
        m,
        gh,
        gr,
        gt,
        gm,
        q,
        x,
        v,
        g,
        ..
    } = ws;

    match model.kind() {
        ModelKind::TransE => {
            for i in 0..d {
                v[i] = h[i] + r[i] - t[i];
            }
            let s = neg_norm_backward(&v[..d], norm, false, &mut g[..d]);
            for i in 0..d {
                gh[i] = g[i];
                gr[i] = g[i];
                gt[i] = -g[i];
            }
            s
        }
        ModelKind::TransR => {
            load_row(model, Table::Projection, tr.relation as usize, m);
            for i in 0..d {
                x[i] = h[i] - t[i];
            }
            matvec(m, &x[..d], &mut v[..d]);
            for i in 0..d {
                v[i] += r[i];
            }
            let s = neg_norm_backward(&v[..d], norm, false, &mut g[..d]);
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += m[i * d + j] * g[i];
                }
                gh[j] = acc;
                gt[j] = -acc;
            }
            gr[..d].copy_from_slice(&g[..d]);
            for i in 0..d {
                for j in 0..d {
                    gm[i * d + j] = g[i] * x[j];
                }
            }
            s
        }
        ModelKind::DistMult => {
            let mut s = 0.0;
            for i in 0..d {
                s += h[i] * r[i] * t[i];
                gh[i] = r[i] * t[i];
                gr[i] = h[i] * t[i];
                gt[i] = h[i] * r[i];
            }
            s
        }
        ModelKind::ComplEx => {
            let mut s = 0.0;
            for i in 0..d {
                let (hr, hi) = (h[2 * i], h[2 * i + 1]);
                let (rr, ri) = (r[2 * i], r[2 * i + 1]);
                let (tr_, ti) = (t[2 * i], t[2 * i + 1]);
                let a = hr * rr - hi * ri;
                let b = hr * ri + hi * rr;
                s += a * tr_ + b * ti;
                gh[2 * i] = rr * tr_ + ri * ti;
                gh[2 * i + 1] = -ri * tr_ + rr * ti;
                gr[2 * i] = hr * tr_ + hi * ti;
                gr[2 * i + 1] = -hi * tr_ + hr * ti;
                gt[2 * i] = a;
                gt[2 * i + 1] = b;
            }
            s
        }
        ModelKind::HolE => {
            let mut s = 0.0;
            for k in 0..d {
                let mut corr = 0.0;
                for i in 0..d {
                    corr += h[i] * t[(i + k) % d];
                }
                gr[k] = corr;
                s += r[k] * corr;
            }
            for i in 0..d {
                let mut a = 0.0;
                let mut b = 0.0;
                for k in 0..d {
                    a += r[k] * t[(i + k) % d];
                    b += r[k] * h[(i + d - k) % d];
                }
                gh[i] = a;
                gt[i] = b;
            }
            s
        }
        ModelKind::RotatE => {
            for i in 0..d {
                let (c, sn) = (r[i].cos(), r[i].sin());
                let (re, im) = (h[2 * i], h[2 * i + 1]);
                q[2 * i] = re * c - im * sn;
                q[2 * i + 1] = re * sn + im * c;
                v[2 * i] = q[2 * i] - t[2 * i];
                v[2 * i + 1] = q[2 * i + 1] - t[2 * i + 1];
            }
            let s = neg_norm_backward(&v[..2 * d], norm, true, &mut g[..2 * d]);
            for i in 0..d {
                let (c, sn) = (r[i].cos(), r[i].sin());
                let (gre, gim) = (g[2 * i], g[2 * i + 1]);
                gt[2 * i] = -gre;
                gt[2 * i + 1] = -gim;
                gh[2 * i] = gre * c + gim * sn;
                gh[2 * i + 1] = -gre * sn + gim * c;
                gr[i] = -gre * q[2 * i + 1] + gim * q[2 * i];
            }
            s
        }
        ModelKind::PairRE => {
            // q <- h normalized, x <- t normalized
            let nh = normalize(&h[..d], &mut q[..d]);
            let nt = normalize(&t[..d], &mut x[..d]);
            let (rh, rt) = r.split_at(d);
            for i in 0..d {
                v[i] = q[i] * rh[i] - x[i] * rt[i];
            }
            let s = neg_norm_backward(&v[..d], norm, false, &mut g[..d]);
            let (grh, grt) = gr.split_at_mut(d);
            for i in 0..d {
                grh[i] = g[i] * q[i];
                grt[i] = -g[i] * x[i];
            }
            // d(x/|x|)/dx applied to the upstream: (gu - u (u . gu)) / |x|
            let mut proj_h = 0.0;
            let mut proj_t = 0.0;
            for i in 0..d {
                proj_h += q[i] * g[i] * rh[i];
                proj_t -= x[i] * g[i] * rt[i];
            }
            for i in 0..d {
                gh[i] = if nh > 0.0 { (g[i] * rh[i] - q[i] * proj_h) / nh } else { 0.0 };
                gt[i] = if nt > 0.0 { (-g[i] * rt[i] - x[i] * proj_t) / nt } else { 0.0 };
            }
            s
        }
    }
}
