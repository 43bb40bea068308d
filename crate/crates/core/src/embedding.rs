use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense `(I, F, d)` table of multifaceted item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEmbeddingTable {
    pub values: Vec<f32>,
    pub items: usize,
    pub facets: usize,
    pub dim: usize,
}

impl ItemEmbeddingTable {
    pub fn zeros(items: usize, facets: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; items * facets * dim],
            items,
            facets,
            dim,
        }
    }

    /// Uniform in `[-1/√d, 1/√d]`.
    pub fn init_uniform(items: usize, facets: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f32).sqrt();
        let mut t = Self::zeros(items, facets, dim);
        t.values
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-bound..=bound));
        t
    }

    pub fn row_len(&self) -> usize {
        self.facets * self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.row_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.row_len();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn facet(&self, i: usize, f: usize) -> &[f32] {
        &self.row(i)[f * self.dim..(f + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Embedding for an item the table has never seen: drawn from the same
/// initializer as trained rows, keyed by the item id so it is reproducible.
pub fn cold_start_embedding(item_id: u64, facets: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ item_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let bound = 1.0 / (dim as f32).sqrt();
    (0..facets * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect()
}

/// Constant-time item id → row offset lookup. Dense id ranges use a flat
/// table, anything sparser falls back to a hash map.
#[derive(Debug, Clone, PartialEq)]
pub enum RowLookup {
    Dense { base: u64, rows: Vec<u32> },
    Sparse(HashMap<u64, u32>),
}

const ABSENT: u32 = u32::MAX;

impl RowLookup {
    pub fn build(ids: &[u64]) -> Result<Self> {
        let (Some(&min), Some(&max)) = (ids.iter().min(), ids.iter().max()) else {
            return Ok(RowLookup::Dense { base: 0, rows: Vec::new() });
        };
        let span = max - min + 1;
        if span <= 4 * ids.len() as u64 + 1024 {
            let mut rows = vec![ABSENT; span as usize];
            for (r, &id) in ids.iter().enumerate() {
                let slot = &mut rows[(id - min) as usize];
                if *slot != ABSENT {
                    return Err(Error::DuplicateItem(id));
                }
                *slot = r as u32;
            }
            Ok(RowLookup::Dense { base: min, rows })
        } else {
            let mut map = HashMap::with_capacity(ids.len());
            for (r, &id) in ids.iter().enumerate() {
                if map.insert(id, r as u32).is_some() {
                    return Err(Error::DuplicateItem(id));
                }
            }
            Ok(RowLookup::Sparse(map))
        }
    }

    #[inline]
    pub fn get(&self, id: u64) -> Option<usize> {
        match self {
            RowLookup::Dense { base, rows } => id
                .checked_sub(*base)
                .and_then(|o| rows.get(o as usize))
                .filter(|&&r| r != ABSENT)
                .map(|&r| r as usize),
            RowLookup::Sparse(map) => map.get(&id).map(|&r| r as usize),
        }
    }
}

/// Embedding table addressed by item id, with cold-start fallback for unknown ids.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    pub item_ids: Vec<u64>,
    pub table: ItemEmbeddingTable,
    lookup: RowLookup,
    pub cold_start_seed: u64,
}

impl EmbeddingStore {
    pub fn new(item_ids: Vec<u64>, table: ItemEmbeddingTable, cold_start_seed: u64) -> Result<Self> {
        if item_ids.len() != table.items {
            return Err(Error::arg("item id count does not match table rows"));
        }
        let lookup = RowLookup::build(&item_ids)?;
        Ok(Self {
            item_ids,
            table,
            lookup,
            cold_start_seed,
        })
    }

    pub fn facets(&self) -> usize {
        self.table.facets
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.lookup.get(id)
    }

    /// Stored row for known ids, cold-start embedding otherwise.
    pub fn embedding(&self, id: u64) -> std::borrow::Cow<'_, [f32]> {
        match self.lookup.get(id) {
            Some(r) => std::borrow::Cow::Borrowed(self.table.row(r)),
            None => std::borrow::Cow::Owned(cold_start_embedding(
                id,
                self.table.facets,
                self.table.dim,
                self.cold_start_seed,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = ItemEmbeddingTable::init_uniform(10, 2, 16, 3);
        let b = ItemEmbeddingTable::init_uniform(10, 2, 16, 3);
        assert_eq!(a, b);
        assert!(a.values.iter().all(|x| x.abs() <= 0.25));
        assert_eq!(a.facet(3, 1), &a.row(3)[16..]);
    }

    #[test]
    fn lookup_dense_and_sparse() {
        let dense = RowLookup::build(&[10, 12, 11]).unwrap();
        assert!(matches!(dense, RowLookup::Dense { .. }));
        assert_eq!(dense.get(12), Some(1));
        assert_eq!(dense.get(13), None);
        assert_eq!(dense.get(3), None);

        let sparse = RowLookup::build(&[1, u64::MAX / 2]).unwrap();
        assert!(matches!(sparse, RowLookup::Sparse(_)));
        assert_eq!(sparse.get(u64::MAX / 2), Some(1));
        assert_eq!(sparse.get(2), None);

        assert!(matches!(RowLookup::build(&[5, 5]), Err(Error::DuplicateItem(5))));
        assert_eq!(RowLookup::build(&[]).unwrap().get(0), None);
    }

    #[test]
    fn cold_start_is_stable() {
        let a = cold_start_embedding(77, 2, 8, 1);
        assert_eq!(a, cold_start_embedding(77, 2, 8, 1));
        assert_ne!(a, cold_start_embedding(78, 2, 8, 1));
        let store = EmbeddingStore::new(vec![1], ItemEmbeddingTable::zeros(1, 2, 8), 1).unwrap();
        assert_eq!(&*store.embedding(77), a.as_slice());
        assert!(store.embedding(1).iter().all(|&x| x == 0.0));
    }
}
