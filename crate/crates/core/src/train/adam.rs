use crate::model::{EmbeddingModel, Gradients, Scalar, Table};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct RowMoments<F> {
    steps: u32,
    m: Box<[F]>,
    v: Box<[F]>,
}

/// Adam moments, allocated per parameter row on first touch. Each row keeps
/// its own step count so bias correction follows the number of updates that
/// row has actually received.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Scalar = f32> {
    tables: Vec<(Table, Vec<Option<RowMoments<F>>>)>,
}

impl<F: Scalar> AdamState<F> {
    pub fn for_model(model: &EmbeddingModel<F>) -> Self {
        Self {
            tables: model
                .tables()
                .map(|t| (t, (0..model.num_rows(t)).map(|_| None).collect()))
                .collect(),
        }
    }

    fn rows_mut(&mut self, table: Table) -> Option<&mut Vec<Option<RowMoments<F>>>> {
        self.tables.iter_mut().find(|(t, _)| *t == table).map(|(_, rows)| rows)
    }

    /// Rows with allocated moments.
    pub fn allocated_rows(&self) -> usize {
        self.tables.iter().map(|(_, rows)| rows.iter().filter(|r| r.is_some()).count()).sum()
    }

    /// Zeroes the moments at the given flat positions of a table.
    pub fn zero_positions(&mut self, table: Table, width: usize, positions: impl IntoIterator<Item = usize>) {
        let Some(rows) = self.rows_mut(table) else { return };
        for p in positions {
            if let Some(Some(row)) = rows.get_mut(p / width) {
                row.m[p % width] = F::ZERO;
                row.v[p % width] = F::ZERO;
            }
        }
    }

    pub fn reset(&mut self) {
        for (_, rows) in &mut self.tables {
            rows.iter_mut().for_each(|r| *r = None);
        }
    }
}

/// One Adam update over the rows present in `grads`; rows absent from
/// `grads` are left alone, moments included.
pub fn adam_step<F: Scalar>(model: &mut EmbeddingModel<F>, grads: &Gradients, state: &mut AdamState<F>, learning_rate: f64) {
    let tables: Vec<Table> = model.tables().collect();
    for table in tables {
        let Some(g) = grads.table(table) else { continue };
        let width = model.row_width(table);
        let Some(rows) = state.rows_mut(table) else { continue };
        for (row, grad) in g.iter() {
            let moments = rows[row].get_or_insert_with(|| RowMoments {
                steps: 0,
                m: vec![F::ZERO; width].into_boxed_slice(),
                v: vec![F::ZERO; width].into_boxed_slice(),
            });
            moments.steps += 1;
            let bc1 = 1.0 - BETA1.powi(moments.steps as i32);
            let bc2 = 1.0 - BETA2.powi(moments.steps as i32);
            let params = model.row_mut(table, row);
            for i in 0..width {
                let gi = grad[i];
                let m = BETA1 * moments.m[i].to_f64() + (1.0 - BETA1) * gi;
                let v = BETA2 * moments.v[i].to_f64() + (1.0 - BETA2) * gi * gi;
                moments.m[i] = F::from_f64(m);
                moments.v[i] = F::from_f64(v);
                let update = learning_rate * (m / bc1) / ((v / bc2).sqrt() + EPSILON);
                params[i] = F::from_f64(params[i].to_f64() - update);
            }
        }
    }
}
