//! Embedding models: parameter tables, initialization, scoring, analytic
//! gradients and feasibility projection for seven scoring functions.
//!
//! Every score is oriented so that higher means more plausible; distance
//! models return the negated distance.

mod grad;
mod kernels;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::triples::Triple;

pub use grad::{Gradients, RowGrads};
pub use kernels::Workspace;

/// Storage precision of parameter tables. Arithmetic always runs in `f64`;
/// `f32` is the deployment format, `f64` is used for gradient checks.
pub trait Scalar: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    const ZERO: Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    TransR,
    DistMult,
    ComplEx,
    HolE,
    RotatE,
    PairRE,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::TransE,
        ModelKind::TransR,
        ModelKind::DistMult,
        ModelKind::ComplEx,
        ModelKind::HolE,
        ModelKind::RotatE,
        ModelKind::PairRE,
    ];

    /// Stable numeric tag used in checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            ModelKind::TransE => 1,
            ModelKind::TransR => 2,
            ModelKind::DistMult => 3,
            ModelKind::ComplEx => 4,
            ModelKind::HolE => 5,
            ModelKind::RotatE => 6,
            ModelKind::PairRE => 7,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "TransE",
            ModelKind::TransR => "TransR",
            ModelKind::DistMult => "DistMult",
            ModelKind::ComplEx => "ComplEx",
            ModelKind::HolE => "HolE",
            ModelKind::RotatE => "RotatE",
            ModelKind::PairRE => "PairRE",
        }
    }

    pub fn entity_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx | ModelKind::RotatE => 2 * dim,
            _ => dim,
        }
    }

    pub fn relation_width(self, dim: usize) -> usize {
        match self {
            ModelKind::ComplEx | ModelKind::PairRE => 2 * dim,
            _ => dim,
        }
    }

    pub fn has_projection(self) -> bool {
        self == ModelKind::TransR
    }

    /// Distance models negate a norm; the others are multiplicative.
    pub fn is_distance(self) -> bool {
        matches!(
            self,
            ModelKind::TransE | ModelKind::TransR | ModelKind::RotatE | ModelKind::PairRE
        )
    }

    pub fn default_norm(self) -> NormKind {
        match self {
            ModelKind::TransR => NormKind::L2,
            _ => NormKind::L1,
        }
    }

    /// Multiply-accumulate operations to score one candidate once the query
    /// side is prepared.
    pub fn macs_per_candidate(self, dim: usize) -> u64 {
        let d = dim as u64;
        match self {
            ModelKind::TransE | ModelKind::DistMult => d,
            ModelKind::TransR => d * d + d,
            ModelKind::ComplEx => 2 * d,
            ModelKind::HolE => d,
            ModelKind::RotatE => 2 * d,
            ModelKind::PairRE => 3 * d,
        }
    }

    /// Multiply-accumulate operations to prepare the query side of a
    /// `(h, r, ?)` or `(?, r, t)` query.
    pub fn macs_per_query(self, dim: usize) -> u64 {
        let d = dim as u64;
        match self {
            ModelKind::TransE => d,
            ModelKind::TransR => d * d + d,
            ModelKind::DistMult => d,
            ModelKind::ComplEx => 4 * d,
            ModelKind::HolE => d * d,
            ModelKind::RotatE => 4 * d,
            ModelKind::PairRE => 2 * d,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    L1,
    L2,
}

impl NormKind {
    pub fn tag(self) -> u32 {
        match self {
            NormKind::L1 => 1,
            NormKind::L2 => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(NormKind::L1),
            2 => Some(NormKind::L2),
            _ => None,
        }
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(NormKind::L1),
            "l2" | "2" => Ok(NormKind::L2),
            _ => Err(Error::Config(format!("unknown norm {s:?}"))),
        }
    }
}

/// One of the model's parameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    Entity,
    Relation,
    Projection,
}

/// Which slot of a query is left open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// `(?, r, t)`: candidates are heads.
    Head,
    /// `(h, r, ?)`: candidates are tails.
    Tail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<F: Scalar = f32> {
    kind: ModelKind,
    dim: usize,
    norm: NormKind,
    num_entities: usize,
    num_relations: usize,
    entities: Vec<F>,
    relations: Vec<F>,
    projections: Option<Vec<F>>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Seeded initialization: entity and relation values uniform in
    /// `[-6/sqrt(dim), 6/sqrt(dim)]`, RotatE phases uniform in `(-pi, pi]`,
    /// TransR projections set to the identity.
    pub fn init(kind: ModelKind, dim: usize, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self> {
        if dim == 0 || num_entities == 0 || num_relations == 0 {
            return Err(Error::Config(format!(
                "model needs dim, entity and relation counts >= 1 (got {dim}, {num_entities}, {num_relations})"
            )));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let entities = (0..num_entities * kind.entity_width(dim))
            .map(|_| F::from_f64(uniform.sample(&mut rng)))
            .collect();
        let relations = if kind == ModelKind::RotatE {
            let unit = Uniform::new(0.0f64, 1.0);
            (0..num_relations * dim)
                .map(|_| F::from_f64(PI - 2.0 * PI * unit.sample(&mut rng)))
                .collect()
        } else {
            (0..num_relations * kind.relation_width(dim))
                .map(|_| F::from_f64(uniform.sample(&mut rng)))
                .collect()
        };
        let projections = kind.has_projection().then(|| {
            let mut p = vec![F::ZERO; num_relations * dim * dim];
            for block in p.chunks_exact_mut(dim * dim) {
                for i in 0..dim {
                    block[i * dim + i] = F::from_f64(1.0);
                }
            }
            p
        });

        Ok(Self {
            kind,
            dim,
            norm: kind.default_norm(),
            num_entities,
            num_relations,
            entities,
            relations,
            projections,
        })
    }

    /// Assembles a model from raw tables, validating their lengths.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        kind: ModelKind,
        dim: usize,
        norm: NormKind,
        num_entities: usize,
        num_relations: usize,
        entities: Vec<F>,
        relations: Vec<F>,
        projections: Option<Vec<F>>,
    ) -> Result<Self> {
        if dim == 0 || num_entities == 0 || num_relations == 0 {
            return Err(Error::Shape("zero-sized model".into()));
        }
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!("{name} table has {got} values, expected {want}")))
            }
        };
        check("entity", entities.len(), num_entities * kind.entity_width(dim))?;
        check("relation", relations.len(), num_relations * kind.relation_width(dim))?;
        match (&projections, kind.has_projection()) {
            (Some(p), true) => check("projection", p.len(), num_relations * dim * dim)?,
            (None, false) => {}
            (Some(_), false) => return Err(Error::Shape(format!("{kind} has no projection table"))),
            (None, true) => return Err(Error::Shape(format!("{kind} needs a projection table"))),
        }
        Ok(Self {
            kind,
            dim,
            norm,
            num_entities,
            num_relations,
            entities,
            relations,
            projections,
        })
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Tables present in this model, in checkpoint order.
    pub fn tables(&self) -> impl Iterator<Item = Table> {
        let proj = self.projections.is_some();
        [Table::Entity, Table::Relation, Table::Projection]
            .into_iter()
            .filter(move |t| *t != Table::Projection || proj)
    }

    pub fn row_width(&self, table: Table) -> usize {
        match table {
            Table::Entity => self.kind.entity_width(self.dim),
            Table::Relation => self.kind.relation_width(self.dim),
            Table::Projection => self.dim * self.dim,
        }
    }

    pub fn num_rows(&self, table: Table) -> usize {
        match table {
            Table::Entity => self.num_entities,
            Table::Relation | Table::Projection => self.num_relations,
        }
    }

    /// The raw row-major table. Projection is empty for non-TransR models.
    pub fn table(&self, table: Table) -> &[F] {
        match table {
            Table::Entity => &self.entities,
            Table::Relation => &self.relations,
            Table::Projection => self.projections.as_deref().unwrap_or(&[]),
        }
    }

    pub fn table_mut(&mut self, table: Table) -> &mut [F] {
        match table {
            Table::Entity => &mut self.entities,
            Table::Relation => &mut self.relations,
            Table::Projection => self.projections.as_deref_mut().unwrap_or(&mut []),
        }
    }

    pub fn row(&self, table: Table, row: usize) -> &[F] {
        let w = self.row_width(table);
        &self.table(table)[row * w..(row + 1) * w]
    }

    pub fn row_mut(&mut self, table: Table, row: usize) -> &mut [F] {
        let w = self.row_width(table);
        &mut self.table_mut(table)[row * w..(row + 1) * w]
    }

    pub fn parameter_count(&self) -> usize {
        self.tables().map(|t| self.table(t).len()).sum()
    }

    pub fn nonzero_count(&self) -> usize {
        self.tables()
            .map(|t| self.table(t).iter().filter(|v| v.to_f64() != 0.0).count())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tables().all(|t| self.table(t).iter().all(|v| v.to_f64().is_finite()))
    }

    /// Converts the tables to another storage precision.
    pub fn cast<G: Scalar>(&self) -> EmbeddingModel<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64(x.to_f64())).collect::<Vec<G>>();
        EmbeddingModel {
            kind: self.kind,
            dim: self.dim,
            norm: self.norm,
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            entities: conv(&self.entities),
            relations: conv(&self.relations),
            projections: self.projections.as_deref().map(conv),
        }
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        if t.head as usize >= self.num_entities || t.tail as usize >= self.num_entities {
            return Err(Error::Index(format!(
                "triple ({}, {}, {}) references an entity outside 0..{}",
                t.head, t.relation, t.tail, self.num_entities
            )));
        }
        if t.relation as usize >= self.num_relations {
            return Err(Error::Index(format!(
                "triple ({}, {}, {}) references a relation outside 0..{}",
                t.head, t.relation, t.tail, self.num_relations
            )));
        }
        Ok(())
    }

    pub fn covers(&self, t: &Triple) -> bool {
        self.check_triple(t).is_ok()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.kind, self.dim)
    }

    /// Scores a batch of triples.
    pub fn score(&self, batch: &[Triple]) -> Result<Vec<f64>> {
        batch.iter().try_for_each(|t| self.check_triple(t))?;
        let mut ws = self.workspace();
        Ok(batch.iter().map(|t| self.score_with(&mut ws, t)).collect())
    }

    /// Scores one triple whose ids are known to be in range.
    pub fn score_with(&self, ws: &mut Workspace, t: &Triple) -> f64 {
        kernels::score_one(self, ws, t)
    }

    /// Scores every entity as the open slot of a query. `out` must have
    /// `num_entities` entries. The tail side agrees bitwise with
    /// [`EmbeddingModel::score`].
    pub fn score_candidates(&self, ws: &mut Workspace, side: Side, anchor: u32, relation: u32, out: &mut [f64]) {
        kernels::score_candidates(self, ws, side, anchor, relation, out)
    }

    /// Gradient of `sum_i upstream[i] * score(batch[i])` with respect to every
    /// parameter row the batch touches.
    pub fn grad(&self, batch: &[Triple], upstream: &[f64]) -> Result<Gradients> {
        if batch.len() != upstream.len() {
            return Err(Error::Shape(format!(
                "{} upstream weights for {} triples",
                upstream.len(),
                batch.len()
            )));
        }
        batch.iter().try_for_each(|t| self.check_triple(t))?;
        let mut grads = Gradients::for_model(self);
        let mut ws = self.workspace();
        for (t, &w) in batch.iter().zip(upstream) {
            self.accumulate_grad(&mut ws, t, w, &mut grads);
        }
        Ok(grads)
    }

    /// Scores `t` and leaves its partial derivatives in the workspace.
    pub(crate) fn local_backward(&self, ws: &mut Workspace, t: &Triple) -> f64 {
        kernels::backward(self, ws, t)
    }

    /// Adds `weight * d score(t) / d params` into `grads` and returns the
    /// score. Rows are registered as touched even when `weight` is zero.
    pub fn accumulate_grad(&self, ws: &mut Workspace, t: &Triple, weight: f64, grads: &mut Gradients) -> f64 {
        let score = kernels::backward(self, ws, t);
        let add = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += weight * s;
            }
        };
        add(grads.entity.row_mut(t.head as usize), &ws.gh);
        add(grads.entity.row_mut(t.tail as usize), &ws.gt);
        add(grads.relation.row_mut(t.relation as usize), &ws.gr);
        if let Some(p) = grads.projection.as_mut() {
            add(p.row_mut(t.relation as usize), &ws.gm);
        }
        score
    }

    /// Keeps parameters feasible: entity rows of TransE, TransR and PairRE
    /// are scaled to L2 norm at most 1, RotatE phases wrapped into `(-pi, pi]`.
    pub fn project_constraints(&mut self) {
        match self.kind {
            ModelKind::TransE | ModelKind::TransR | ModelKind::PairRE => {
                let w = self.row_width(Table::Entity);
                for row in self.entities.chunks_exact_mut(w) {
                    let norm = row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
                    if norm > 1.0 {
                        for v in row.iter_mut() {
                            *v = F::from_f64(v.to_f64() / norm);
                        }
                        // rounding can leave the row a hair above 1
                        let again = row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
                        if again > 1.0 {
                            for v in row.iter_mut() {
                                *v = F::from_f64(v.to_f64() / again);
                            }
                        }
                    }
                }
            }
            ModelKind::RotatE => {
                for v in self.relations.iter_mut() {
                    *v = wrap_phase(*v);
                }
            }
            _ => {}
        }
    }
}

/// Wraps an angle into `(-pi, pi]`, using pi as rounded to the storage type
/// so that the result is a fixed point.
pub fn wrap_phase<F: Scalar>(v: F) -> F {
    let pi = F::from_f64(PI).to_f64();
    let x = v.to_f64();
    if x > -pi && x <= pi {
        return v;
    }
    if !x.is_finite() {
        return F::ZERO;
    }
    let two_pi = 2.0 * pi;
    let mut y = x - two_pi * ((x - pi) / two_pi).ceil();
    if y <= -pi {
        y += two_pi;
    }
    if y > pi {
        y -= two_pi;
    }
    let out = F::from_f64(y);
    if out.to_f64() <= -pi {
        F::from_f64(pi)
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(kind: ModelKind, dim: usize) -> EmbeddingModel<f64> {
        let mut m = EmbeddingModel::<f64>::init(kind, dim, 2, 1, 0).unwrap();
        for t in [Table::Entity, Table::Relation] {
            m.table_mut(t).fill(0.0);
        }
        m
    }

    #[test]
    fn widths_follow_kind() {
        assert_eq!(ModelKind::ComplEx.entity_width(4), 8);
        assert_eq!(ModelKind::RotatE.entity_width(4), 8);
        assert_eq!(ModelKind::RotatE.relation_width(4), 4);
        assert_eq!(ModelKind::PairRE.relation_width(4), 8);
        assert_eq!(ModelKind::HolE.relation_width(4), 4);
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }

    #[test]
    fn init_is_deterministic() {
        for kind in ModelKind::ALL {
            let a = EmbeddingModel::<f32>::init(kind, 6, 5, 3, 11).unwrap();
            let b = EmbeddingModel::<f32>::init(kind, 6, 5, 3, 11).unwrap();
            assert_eq!(a, b);
            let c = EmbeddingModel::<f32>::init(kind, 6, 5, 3, 12).unwrap();
            assert_ne!(a, c);
        }
        assert!(EmbeddingModel::<f32>::init(ModelKind::TransE, 0, 1, 1, 0).is_err());
    }

    #[test]
    fn transr_projections_start_as_identity() {
        let m = EmbeddingModel::<f32>::init(ModelKind::TransR, 3, 4, 2, 5).unwrap();
        for r in 0..2 {
            let block = m.row(Table::Projection, r);
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(block[i * 3 + j], if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn init_values_stay_in_bounds() {
        let dim = 100;
        let m = EmbeddingModel::<f32>::init(ModelKind::TransE, dim, 5000, 20, 3).unwrap();
        assert!(m.table(Table::Entity).len() >= 500_000);
        let bound = (6.0 / (dim as f64).sqrt()) as f32;
        assert!(m.table(Table::Entity).iter().all(|v| v.abs() <= bound));
        let r = EmbeddingModel::<f32>::init(ModelKind::RotatE, dim, 10, 2000, 3).unwrap();
        let pi = std::f32::consts::PI;
        assert!(r.table(Table::Relation).iter().all(|v| *v > -pi && *v <= pi));
    }

    #[test]
    fn analytic_scores() {
        let m = zero_model(ModelKind::TransE, 4);
        assert_eq!(m.score(&[Triple::new(0, 0, 0)]).unwrap(), vec![0.0]);

        let mut m = zero_model(ModelKind::DistMult, 5);
        for t in [Table::Entity, Table::Relation] {
            m.table_mut(t).fill(1.0);
        }
        assert_eq!(m.score(&[Triple::new(0, 0, 1)]).unwrap(), vec![5.0]);

        let mut m = zero_model(ModelKind::RotatE, 3);
        m.row_mut(Table::Entity, 0).copy_from_slice(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.9]);
        m.row_mut(Table::Entity, 1).copy_from_slice(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.9]);
        assert_eq!(m.score(&[Triple::new(0, 0, 1)]).unwrap(), vec![0.0]);

        let mut m = zero_model(ModelKind::ComplEx, 2);
        let unit = [0.6, 0.0, 0.8, 0.0];
        m.row_mut(Table::Entity, 0).copy_from_slice(&unit);
        m.row_mut(Table::Entity, 1).copy_from_slice(&unit);
        m.row_mut(Table::Relation, 0).copy_from_slice(&[1.0, 0.0, 1.0, 0.0]);
        let s = m.score(&[Triple::new(0, 0, 1)]).unwrap()[0];
        assert!((s - 1.0).abs() < 1e-12);

        let mut m = zero_model(ModelKind::HolE, 2);
        let (a, b) = (0.37, -1.25);
        m.row_mut(Table::Entity, 0).copy_from_slice(&[1.0, 0.0]);
        m.row_mut(Table::Entity, 1).copy_from_slice(&[0.0, 1.0]);
        m.row_mut(Table::Relation, 0).copy_from_slice(&[a, b]);
        assert_eq!(m.score(&[Triple::new(0, 0, 1)]).unwrap(), vec![b]);
    }

    #[test]
    fn out_of_range_ids_are_index_errors() {
        let m = EmbeddingModel::<f32>::init(ModelKind::TransE, 2, 3, 1, 0).unwrap();
        assert!(matches!(m.score(&[Triple::new(3, 0, 0)]), Err(Error::Index(_))));
        assert!(matches!(m.score(&[Triple::new(0, 1, 0)]), Err(Error::Index(_))));
        assert!(matches!(m.grad(&[Triple::new(0, 0, 9)], &[1.0]), Err(Error::Index(_))));
    }

    #[test]
    fn distmult_gradient_is_exact() {
        let m = EmbeddingModel::<f64>::init(ModelKind::DistMult, 4, 3, 1, 9).unwrap();
        let t = Triple::new(0, 0, 2);
        let g = m.grad(&[t], &[1.0]).unwrap();
        let (r, tl) = (m.row(Table::Relation, 0), m.row(Table::Entity, 2));
        let gh = g.entity.row(0).unwrap();
        for i in 0..4 {
            assert_eq!(gh[i], r[i] * tl[i]);
        }
        assert!(g.entity.row(1).is_none());
        let zero = m.grad(&[t], &[0.0]).unwrap();
        assert!(zero.entity.iter().all(|(_, row)| row.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn projection_normalizes_rows() {
        let mut m = zero_model(ModelKind::TransE, 2);
        m.row_mut(Table::Entity, 0).copy_from_slice(&[2.0, 0.0]);
        m.row_mut(Table::Entity, 1).copy_from_slice(&[0.3, 0.4]);
        let before = m.clone();
        m.project_constraints();
        assert_eq!(m.row(Table::Entity, 0), &[1.0, 0.0]);
        assert_eq!(m.row(Table::Entity, 1), before.row(Table::Entity, 1));
        let once = m.clone();
        m.project_constraints();
        assert_eq!(m, once);
    }

    #[test]
    fn phases_wrap() {
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_phase(-PI), wrap_phase(PI));
        assert!((wrap_phase(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
        let w = wrap_phase(3.0f32 * std::f32::consts::PI);
        assert_eq!(wrap_phase(w), w);
        assert!((w - std::f32::consts::PI).abs() < 1e-5);
    }
}
