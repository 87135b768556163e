//! Per-field embedding tables with lookup counters.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform, Module, Param, ParamSink, Tensor2};

/// `vocab_size × dim` trainable matrix for one field.
#[derive(Debug)]
pub struct EmbeddingTable {
    pub field_index: usize,
    pub weight: Param,
    lookups: AtomicU64,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        Self {
            field_index: self.field_index,
            weight: self.weight.clone(),
            lookups: AtomicU64::new(self.lookup_count()),
        }
    }
}

impl PartialEq for EmbeddingTable {
    fn eq(&self, other: &Self) -> bool {
        self.field_index == other.field_index && self.weight == other.weight
    }
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, field_index: usize, vocab_size: usize, dim: usize) -> Self {
        Self::from_matrix(field_index, xavier_uniform(rng, vocab_size, dim))
    }

    pub fn from_matrix(field_index: usize, matrix: Tensor2) -> Self {
        Self {
            field_index,
            weight: Param::new(matrix),
            lookups: AtomicU64::new(0),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    pub fn reset_lookup_count(&self) {
        self.lookups.store(0, Ordering::Relaxed);
    }

    /// The row for `id`; counts one lookup.
    pub fn lookup(&self, id: u32) -> Result<&[f64]> {
        let id = id as usize;
        if id >= self.vocab_size() {
            return Err(Error::OutOfRange {
                what: "embedding table",
                index: id,
                size: self.vocab_size(),
            });
        }
        self.lookups.fetch_add(1, Ordering::Relaxed);
        Ok(self.weight.value.row(id))
    }

    fn accumulate(&mut self, id: u32, grad: &[f64]) {
        for (g, &d) in self.weight.grad.row_mut(id as usize).iter_mut().zip(grad) {
            *g += d;
        }
    }
}

/// One table per field, all of the same dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    tables: Vec<EmbeddingTable>,
    dim: usize,
}

impl EmbeddingSet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, vocab_sizes: &[usize], dim: usize) -> Self {
        let tables = vocab_sizes
            .iter()
            .enumerate()
            .map(|(n, &v)| EmbeddingTable::new(rng, n, v, dim))
            .collect();
        Self { tables, dim }
    }

    pub fn from_tables(tables: Vec<EmbeddingTable>) -> Result<Self> {
        let dim = tables.first().map_or(0, EmbeddingTable::dim);
        if tables.iter().any(|t| t.dim() != dim) {
            return Err(Error::InvalidArgument("embedding tables must share one dimension".into()));
        }
        if tables.iter().enumerate().any(|(i, t)| t.field_index != i) {
            return Err(Error::InvalidArgument("tables must be ordered by field index".into()));
        }
        Ok(Self { tables, dim })
    }

    pub fn n_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [EmbeddingTable] {
        &mut self.tables
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(EmbeddingTable::vocab_size).collect()
    }

    pub fn lookup_counts(&self) -> Vec<u64> {
        self.tables.iter().map(EmbeddingTable::lookup_count).collect()
    }

    pub fn total_lookups(&self) -> u64 {
        self.tables.iter().map(EmbeddingTable::lookup_count).sum()
    }

    pub fn reset_lookup_counts(&self) {
        self.tables.iter().for_each(EmbeddingTable::reset_lookup_count);
    }

    fn check_ids(&self, x: &[u32]) -> Result<()> {
        if x.len() != self.tables.len() {
            return Err(Error::InvalidArgument(format!(
                "instance has {} ids, embedding set has {} fields",
                x.len(),
                self.tables.len()
            )));
        }
        Ok(())
    }

    /// Embeds every field of one instance.
    pub fn embed(&self, x: &[u32]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(x)?;
        self.tables
            .iter()
            .zip(x)
            .map(|(t, &id)| t.lookup(id).map(<[f64]>::to_vec))
            .collect()
    }

    /// Embeds only the fields in `selected`, in that order.
    pub fn embed_selected(&self, x: &[u32], selected: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_ids(x)?;
        validate_selection(selected, self.tables.len())?;
        selected
            .iter()
            .map(|&n| self.tables[n].lookup(x[n]).map(<[f64]>::to_vec))
            .collect()
    }

    /// `batch × (N·d)` embeddings of all fields.
    pub fn embed_batch(&self, batch: &[&[u32]]) -> Result<Tensor2> {
        let (n, d) = (self.tables.len(), self.dim);
        let mut out = Tensor2::zeros(batch.len(), n * d);
        for (b, x) in batch.iter().enumerate() {
            self.check_ids(x)?;
            let row = out.row_mut(b);
            for (f, (t, &id)) in self.tables.iter().zip(x.iter()).enumerate() {
                row[f * d..(f + 1) * d].copy_from_slice(t.lookup(id)?);
            }
        }
        Ok(out)
    }

    /// `batch × (k·d)` embeddings of each instance's selected fields.
    pub fn embed_selected_batch(&self, batch: &[&[u32]], selections: &[Vec<usize>]) -> Result<Tensor2> {
        if batch.len() != selections.len() {
            return Err(Error::InvalidArgument("one selection per instance required".into()));
        }
        let k = selections.first().map_or(0, Vec::len);
        let d = self.dim;
        let mut out = Tensor2::zeros(batch.len(), k * d);
        for (b, (x, sel)) in batch.iter().zip(selections).enumerate() {
            self.check_ids(x)?;
            if sel.len() != k {
                return Err(Error::InvalidArgument("selections must share one size k".into()));
            }
            validate_selection(sel, self.tables.len())?;
            let row = out.row_mut(b);
            for (j, &f) in sel.iter().enumerate() {
                row[j * d..(j + 1) * d].copy_from_slice(self.tables[f].lookup(x[f])?);
            }
        }
        Ok(out)
    }

    /// Scatters `dL/dE` (`batch × (N·d)`) into the touched rows.
    pub fn backward_batch(&mut self, batch: &[&[u32]], grad: &Tensor2) -> Result<()> {
        let d = self.dim;
        for (b, x) in batch.iter().enumerate() {
            let g = grad.row(b);
            for (f, (t, &id)) in self.tables.iter_mut().zip(x.iter()).enumerate() {
                t.accumulate(id, &g[f * d..(f + 1) * d]);
            }
        }
        Ok(())
    }

    /// Scatters `dL/dE_sel` (`batch × (k·d)`) into the selected tables' rows.
    pub fn backward_selected(&mut self, batch: &[&[u32]], selections: &[Vec<usize>], grad: &Tensor2) -> Result<()> {
        let d = self.dim;
        for (b, (x, sel)) in batch.iter().zip(selections).enumerate() {
            let g = grad.row(b);
            for (j, &f) in sel.iter().enumerate() {
                self.tables[f].accumulate(x[f], &g[j * d..(j + 1) * d]);
            }
        }
        Ok(())
    }
}

impl Module for EmbeddingSet {
    fn visit_params<'a>(&'a mut self, prefix: &str, sink: &mut ParamSink<'a>) {
        for t in &mut self.tables {
            sink.push((format!("{prefix}.table{}", t.field_index), &mut t.weight));
        }
    }
}

/// Selected indices must be distinct and below `n_fields`.
pub fn validate_selection(selected: &[usize], n_fields: usize) -> Result<()> {
    let mut seen = vec![false; n_fields];
    for &i in selected {
        if i >= n_fields {
            return Err(Error::OutOfRange {
                what: "field selection",
                index: i,
                size: n_fields,
            });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("field {i} selected twice")));
        }
    }
    Ok(())
}

/// Trainable parameter count of all tables.
pub fn table_param_count(set: &EmbeddingSet) -> u64 {
    full_param_count(&set.vocab_sizes(), set.dim())
}

/// `Σ_n vocab_size(n) × d`.
pub fn full_param_count(vocab_sizes: &[usize], dim: usize) -> u64 {
    vocab_sizes.iter().map(|&v| v as u64).sum::<u64>() * dim as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot_set(vocab: usize, fields: usize) -> EmbeddingSet {
        let tables = (0..fields)
            .map(|f| {
                let mut m = Tensor2::zeros(vocab, vocab);
                for i in 0..vocab {
                    m.set(i, i, 1.0);
                }
                EmbeddingTable::from_matrix(f, m)
            })
            .collect();
        EmbeddingSet::from_tables(tables).unwrap()
    }

    #[test]
    fn one_hot_rows_come_back() {
        let set = one_hot_set(4, 3);
        let e = set.embed(&[2, 0, 3]).unwrap();
        assert_eq!(e[0], vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(e[2], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(set.total_lookups(), 3);
    }

    #[test]
    fn selected_lookups_are_counted_exactly() {
        let set = one_hot_set(4, 3);
        assert_eq!(set.embed_selected(&[1, 2, 3], &[0, 1, 2]).unwrap(), set.embed(&[1, 2, 3]).unwrap());
        set.reset_lookup_counts();
        assert!(set.embed_selected(&[1, 2, 3], &[]).unwrap().is_empty());
        assert_eq!(set.total_lookups(), 0);
        let e = set.embed_selected(&[1, 2, 3], &[2, 0]).unwrap();
        assert_eq!(e[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(set.lookup_counts(), vec![1, 0, 1]);
    }

    #[test]
    fn half_of_twenty_two_fields_costs_eleven_lookups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = EmbeddingSet::new(&mut rng, &[3; 22], 2);
        let sel: Vec<usize> = (0..22).step_by(2).collect();
        set.embed_selected(&[1; 22], &sel).unwrap();
        assert_eq!(set.total_lookups(), 11);
    }

    #[test]
    fn invalid_ids_and_selections() {
        let set = one_hot_set(4, 3);
        assert!(matches!(set.embed(&[4, 0, 0]), Err(Error::OutOfRange { .. })));
        assert!(set.embed(&[0, 0]).is_err());
        assert!(set.embed_selected(&[0, 0, 0], &[1, 1]).is_err());
        assert!(set.embed_selected(&[0, 0, 0], &[3]).is_err());
    }

    #[test]
    fn gradient_only_reaches_touched_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = EmbeddingSet::new(&mut rng, &[5, 5, 5], 2);
        let x: Vec<u32> = vec![1, 3, 4];
        let batch = [x.as_slice()];
        let sel = vec![vec![1]];
        let g = Tensor2::from_rows(&[[0.5, -2.0]]).unwrap();
        set.backward_selected(&batch, &sel, &g).unwrap();
        let t = set.tables();
        assert!(t[0].weight.grad.as_slice().iter().all(|&v| v == 0.0));
        assert!(t[2].weight.grad.as_slice().iter().all(|&v| v == 0.0));
        for r in 0..5 {
            let row = t[1].weight.grad.row(r);
            if r == 3 {
                assert_eq!(row, &[0.5, -2.0]);
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn large_vocab_counts() {
        assert_eq!(full_param_count(&[2_018_012], 32), 64_576_384);
        assert_eq!(full_param_count(&[1_086_810], 32), 34_777_920);
        assert_eq!(full_param_count(&[2_018_012], 4), 8_072_048);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = EmbeddingSet::new(&mut rng, &[10, 20, 30], 4);
        assert_eq!(table_param_count(&set), 240);
    }
}
