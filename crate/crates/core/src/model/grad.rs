use super::{EmbeddingModel, Scalar, Table};

const ABSENT: u32 = u32::MAX;

/// Sparse per-row accumulator for one parameter table. Only rows touched
/// by a batch are stored; they are kept in first-touch order.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrads {
    width: usize,
    slot: Vec<u32>,
    rows: Vec<u32>,
    data: Vec<f64>,
}

impl RowGrads {
    pub fn new(num_rows: usize, width: usize) -> Self {
        Self {
            width,
            slot: vec![ABSENT; num_rows],
            rows: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Gradient row, registering it as touched.
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let mut s = self.slot[row];
        if s == ABSENT {
            s = self.rows.len() as u32;
            self.slot[row] = s;
            self.rows.push(row as u32);
            self.data.resize(self.data.len() + self.width, 0.0);
        }
        let start = s as usize * self.width;
        &mut self.data[start..start + self.width]
    }

    pub fn row(&self, row: usize) -> Option<&[f64]> {
        let s = *self.slot.get(row)?;
        (s != ABSENT).then(|| {
            let start = s as usize * self.width;
            &self.data[start..start + self.width]
        })
    }

    pub fn touched(&self) -> usize {
        self.rows.len()
    }

    pub fn touched_rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.rows
            .iter()
            .zip(self.data.chunks_exact(self.width.max(1)))
            .map(|(r, d)| (*r as usize, d))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut [f64])> + '_ {
        let w = self.width.max(1);
        self.rows.iter().zip(self.data.chunks_exact_mut(w)).map(|(r, d)| (*r as usize, d))
    }

    /// Adds `other` row by row.
    pub fn merge(&mut self, other: &RowGrads) {
        for (row, vals) in other.iter() {
            for (d, s) in self.row_mut(row).iter_mut().zip(vals) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn clear(&mut self) {
        for r in self.rows.drain(..) {
            self.slot[r as usize] = ABSENT;
        }
        self.data.clear();
    }
}

/// Gradients for every table of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub entity: RowGrads,
    pub relation: RowGrads,
    pub projection: Option<RowGrads>,
}

impl Gradients {
    pub fn for_model<F: Scalar>(model: &EmbeddingModel<F>) -> Self {
        Self {
            entity: RowGrads::new(model.num_entities(), model.row_width(Table::Entity)),
            relation: RowGrads::new(model.num_relations(), model.row_width(Table::Relation)),
            projection: model
                .kind()
                .has_projection()
                .then(|| RowGrads::new(model.num_relations(), model.row_width(Table::Projection))),
        }
    }

    pub fn table(&self, table: Table) -> Option<&RowGrads> {
        match table {
            Table::Entity => Some(&self.entity),
            Table::Relation => Some(&self.relation),
            Table::Projection => self.projection.as_ref(),
        }
    }

    pub fn table_mut(&mut self, table: Table) -> Option<&mut RowGrads> {
        match table {
            Table::Entity => Some(&mut self.entity),
            Table::Relation => Some(&mut self.relation),
            Table::Projection => self.projection.as_mut(),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        self.entity.merge(&other.entity);
        self.relation.merge(&other.relation);
        if let (Some(a), Some(b)) = (self.projection.as_mut(), other.projection.as_ref()) {
            a.merge(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.entity.scale(factor);
        self.relation.scale(factor);
        if let Some(p) = self.projection.as_mut() {
            p.scale(factor);
        }
    }

    pub fn clear(&mut self) {
        self.entity.clear();
        self.relation.clear();
        if let Some(p) = self.projection.as_mut() {
            p.clear();
        }
    }

    /// Total touched rows across all tables.
    pub fn touched(&self) -> usize {
        self.entity.touched() + self.relation.touched() + self.projection.as_ref().map_or(0, RowGrads::touched)
    }

    /// Value at a flat position of a table, zero when the row is untouched.
    pub fn value(&self, table: Table, flat_index: usize) -> f64 {
        let Some(g) = self.table(table) else { return 0.0 };
        let w = g.width();
        g.row(flat_index / w).map_or(0.0, |r| r[flat_index % w])
    }
}
