//! Unified index encoding and the item↔index lookup structures.

use crate::embedding::RowLookup;
use crate::error::{Error, Result};

/// Mixed-radix encoding of a per-layer codeword tuple (last layer fastest).
pub fn encode_unified(tuple: &[usize], layer_sizes: &[usize]) -> Result<u64> {
    if tuple.len() != layer_sizes.len() {
        return Err(Error::arg("tuple length does not match layer count"));
    }
    let mut c = 0u64;
    for (l, (&t, &n)) in tuple.iter().zip(layer_sizes).enumerate() {
        if t >= n {
            return Err(Error::arg(format!("component {t} out of range for layer {l} of size {n}")));
        }
        c = c * n as u64 + t as u64;
    }
    Ok(c)
}

pub fn decode_unified(mut c: u64, layer_sizes: &[usize]) -> Result<Vec<usize>> {
    let total: u64 = layer_sizes.iter().map(|&n| n as u64).product();
    if c >= total {
        return Err(Error::arg(format!("index {c} out of range [0, {total})")));
    }
    let mut t = vec![0; layer_sizes.len()];
    for (l, &n) in layer_sizes.iter().enumerate().rev() {
        t[l] = (c % n as u64) as usize;
        c /= n as u64;
    }
    Ok(t)
}

/// Offsets a facet-local index by the summed slot counts of earlier facets.
/// `facet_index == slots_f` is the facet's invalid slot.
pub fn facet_offset(facet_index: u64, slots_f: u64, prior: &[u64]) -> Result<u64> {
    if facet_index > slots_f {
        return Err(Error::arg(format!("facet index {facet_index} exceeds {slots_f}")));
    }
    Ok(prior.iter().sum::<u64>() + facet_index)
}

/// Per-item unified index vectors over a shared cross-facet range. Facet `f`
/// owns `[offsets[f], offsets[f] + counts[f]]`; the top value is its invalid index.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTable {
    pub item_ids: Vec<u64>,
    pub facets: usize,
    /// `I × F`, row-major.
    pub indices: Vec<u64>,
    /// Merged-index count `M_f` per facet (invalid slot excluded).
    pub counts: Vec<u64>,
    pub offsets: Vec<u64>,
}

impl AssignmentTable {
    /// `fine[f][row]` is the facet-local index, `None` for invalid.
    pub fn from_facet_columns(item_ids: Vec<u64>, fine: &[Vec<Option<u32>>], counts: Vec<u64>) -> Result<Self> {
        let facets = counts.len();
        if fine.len() != facets || fine.iter().any(|c| c.len() != item_ids.len()) {
            return Err(Error::arg("facet columns do not match item count"));
        }
        let offsets = offsets_for(&counts);
        let mut indices = vec![0u64; item_ids.len() * facets];
        for (f, col) in fine.iter().enumerate() {
            for (r, a) in col.iter().enumerate() {
                let local = match a {
                    Some(m) if (*m as u64) < counts[f] => *m as u64,
                    Some(m) => return Err(Error::arg(format!("index {m} out of range on facet {f}"))),
                    None => counts[f],
                };
                indices[r * facets + f] = offsets[f] + local;
            }
        }
        Ok(Self {
            item_ids,
            facets,
            indices,
            counts,
            offsets,
        })
    }

    pub fn total_slots(&self) -> u64 {
        self.counts.iter().map(|m| m + 1).sum()
    }

    pub fn invalid_index(&self, f: usize) -> u64 {
        self.offsets[f] + self.counts[f]
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.indices[r * self.facets..(r + 1) * self.facets]
    }

    /// Facet owning unified index `m`, and its facet-local value.
    pub fn split_unified(&self, m: u64) -> Option<(usize, u64)> {
        let f = self.offsets.partition_point(|&o| o <= m).checked_sub(1)?;
        let local = m - self.offsets[f];
        (local <= self.counts[f]).then_some((f, local))
    }

    pub fn is_invalid(&self, m: u64) -> bool {
        matches!(self.split_unified(m), Some((f, local)) if local == self.counts[f])
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.item_ids.len() * self.facets || self.offsets != offsets_for(&self.counts) {
            return Err(Error::arg("assignment table shape is inconsistent"));
        }
        for r in 0..self.item_ids.len() {
            for (f, &m) in self.row(r).iter().enumerate() {
                if m < self.offsets[f] || m > self.invalid_index(f) {
                    return Err(Error::arg(format!("row {r} facet {f} index {m} outside facet range")));
                }
            }
        }
        Ok(())
    }
}

fn offsets_for(counts: &[u64]) -> Vec<u64> {
    let mut acc = 0;
    counts
        .iter()
        .map(|m| {
            let o = acc;
            acc += m + 1;
            o
        })
        .collect()
}

/// Item id → row → unified index vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemToIndexMap {
    pub row_offset: RowLookup,
    pub facets: usize,
    pub index_tensor: Vec<u64>,
}

impl ItemToIndexMap {
    pub fn lookup(&self, item_id: u64) -> Option<&[u64]> {
        self.row_offset
            .get(item_id)
            .map(|r| &self.index_tensor[r * self.facets..(r + 1) * self.facets])
    }
}

/// Unified index → contiguous segment of item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexToItemMap {
    pub counts: Vec<u32>,
    /// Item ids grouped by unified index, ascending within a segment.
    pub items: Vec<u64>,
    /// `prefix[m]..prefix[m + 1]` is the segment of `m`.
    pub prefix: Vec<u64>,
}

impl IndexToItemMap {
    pub fn segment(&self, m: u64) -> Result<&[u64]> {
        let m = m as usize;
        if m >= self.counts.len() {
            return Err(Error::arg(format!("index {m} out of range")));
        }
        Ok(&self.items[self.prefix[m] as usize..self.prefix[m + 1] as usize])
    }
}

pub fn build_maps(table: &AssignmentTable) -> Result<(ItemToIndexMap, IndexToItemMap)> {
    table.validate()?;
    let row_offset = RowLookup::build(&table.item_ids)?;
    let slots = table.total_slots() as usize;
    let mut counts = vec![0u32; slots];
    for &m in &table.indices {
        counts[m as usize] += 1;
    }
    let mut prefix = Vec::with_capacity(slots + 1);
    prefix.push(0u64);
    for &c in &counts {
        prefix.push(prefix.last().unwrap() + c as u64);
    }
    // Rows visited in ascending id order keep each segment sorted.
    let mut order: Vec<usize> = (0..table.item_ids.len()).collect();
    order.sort_unstable_by_key(|&r| table.item_ids[r]);
    let mut cursor = prefix[..slots].to_vec();
    let mut items = vec![0u64; table.indices.len()];
    for r in order {
        for &m in table.row(r) {
            let pos = &mut cursor[m as usize];
            items[*pos as usize] = table.item_ids[r];
            *pos += 1;
        }
    }
    Ok((
        ItemToIndexMap {
            row_offset,
            facets: table.facets,
            index_tensor: table.indices.clone(),
        },
        IndexToItemMap { counts, items, prefix },
    ))
}

/// The stored unified index vector for `item_id`, if present.
pub fn lookup_indices(map: &ItemToIndexMap, item_id: u64) -> Option<&[u64]> {
    map.lookup(item_id)
}

/// Items on index `m`; empty for invalid indices, which are never retrievable.
pub fn items_for_index<'a>(table: &AssignmentTable, map: &'a IndexToItemMap, m: u64) -> Result<&'a [u64]> {
    if m >= table.total_slots() {
        return Err(Error::arg(format!("index {m} out of range")));
    }
    if table.is_invalid(m) {
        return Ok(&[]);
    }
    map.segment(m)
}
