//! Full and delta snapshots: publishing, serialization and atomic swapping.
//!
//! A full snapshot quantizes and rebalances the whole pool. A delta snapshot
//! quantizes items that arrived after its paired full snapshot and keeps their
//! original codeword indices; the full snapshot's remap joins the two at
//! serving time.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::container::{self, FileKind, Reader, Writer};
use crate::embedding::{EmbeddingStore, ItemEmbeddingTable};
use crate::error::{DecodeError, Error, Result};
use crate::exec::Exec;
use crate::index::{build_maps, encode_unified, AssignmentTable, IndexToItemMap, ItemToIndexMap};
use crate::quantizer::{quantize_facet, Codebook};
use crate::rebalance::{rebalance, IndexRemap, Rebalanced, SizeBounds};

/// Model state a snapshot is published from.
#[derive(Debug, Clone, Copy)]
pub struct PublishSource<'a> {
    pub embeddings: &'a EmbeddingStore,
    pub codebook: &'a Codebook,
    pub codebook_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullSnapshot {
    pub snapshot_id: u64,
    pub created_at: u64,
    pub codebook_version: u64,
    pub config_echo: String,
    pub layer_sizes: Vec<usize>,
    pub assignments: AssignmentTable,
    pub item_map: ItemToIndexMap,
    pub index_map: IndexToItemMap,
    /// Per facet, facet-local fine index → original indices.
    pub remaps: Vec<IndexRemap>,
    /// Per facet, original index each fine index descends from.
    pub lineage: Vec<Vec<u32>>,
    derived: Derived,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Derived {
    /// Per facet, original index → fine indices whose remap contains it.
    inverse: Vec<BTreeMap<u32, Vec<u32>>>,
    /// Per facet, layer-(L−1) parent → non-empty fine indices, ascending.
    siblings: Vec<BTreeMap<u32, Vec<u32>>>,
}

impl FullSnapshot {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        snapshot_id: u64,
        created_at: u64,
        codebook_version: u64,
        config_echo: String,
        layer_sizes: Vec<usize>,
        assignments: AssignmentTable,
        remaps: Vec<IndexRemap>,
        lineage: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let (item_map, index_map) = build_maps(&assignments)?;
        let mut s = Self {
            snapshot_id,
            created_at,
            codebook_version,
            config_echo,
            layer_sizes,
            assignments,
            item_map,
            index_map,
            remaps,
            lineage,
            derived: Derived::default(),
        };
        s.derive()?;
        Ok(s)
    }

    fn derive(&mut self) -> Result<()> {
        let facets = self.assignments.facets;
        if self.remaps.len() != facets || self.lineage.len() != facets {
            return Err(Error::arg("remap/lineage need one entry per facet"));
        }
        let last = self.layer_sizes.last().copied().unwrap_or(1).max(1) as u32;
        let mut siblings = Vec::with_capacity(facets);
        for f in 0..facets {
            let m_f = self.assignments.counts[f] as usize;
            if self.remaps[f].fine_to_original.len() != m_f || self.lineage[f].len() != m_f {
                return Err(Error::arg(format!("facet {f} remap size does not match M_f")));
            }
            let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for fine in 0..m_f as u32 {
                let u = self.assignments.offsets[f] + fine as u64;
                if self.index_map.counts[u as usize] > 0 {
                    groups.entry(self.lineage[f][fine as usize] / last).or_default().push(fine);
                }
            }
            siblings.push(groups);
        }
        self.derived = Derived {
            inverse: self.remaps.iter().map(IndexRemap::inverse).collect(),
            siblings,
        };
        Ok(())
    }

    pub fn facets(&self) -> usize {
        self.assignments.facets
    }

    pub fn num_items(&self) -> usize {
        self.assignments.item_ids.len()
    }

    /// Unified index vector of a pooled item.
    pub fn lookup(&self, item_id: u64) -> Option<&[u64]> {
        self.item_map.lookup(item_id)
    }

    /// Items served from unified index `m`; empty for invalid indices.
    pub fn items(&self, m: u64) -> Result<&[u64]> {
        crate::index::items_for_index(&self.assignments, &self.index_map, m)
    }

    /// Facet and facet-local value of unified index `m`.
    pub fn facet_of(&self, m: u64) -> Result<(usize, u64)> {
        self.assignments
            .split_unified(m)
            .ok_or_else(|| Error::arg(format!("index {m} out of range")))
    }

    pub fn unified(&self, f: usize, fine: u32) -> u64 {
        self.assignments.offsets[f] + fine as u64
    }

    /// Original (pre-rebalance) indices covered by unified index `m`.
    pub fn fresh_indices_for(&self, m: u64) -> Result<&[u32]> {
        let (f, local) = self.facet_of(m)?;
        Ok(self.remaps[f].originals(local as u32).unwrap_or(&[]))
    }

    /// Unified indices whose remap covers original index `o` on facet `f`.
    pub fn fine_for_original(&self, f: usize, o: u32) -> Vec<u64> {
        self.derived.inverse[f]
            .get(&o)
            .map(|v| v.iter().map(|&m| self.unified(f, m)).collect())
            .unwrap_or_default()
    }

    /// Non-empty unified indices sharing `m`'s layer-(L−1) parent, ascending, `m` excluded.
    pub fn siblings(&self, m: u64) -> Result<Vec<u64>> {
        let (f, local) = self.facet_of(m)?;
        if local == self.assignments.counts[f] {
            return Ok(Vec::new());
        }
        let last = self.layer_sizes.last().copied().unwrap_or(1).max(1) as u32;
        let parent = self.lineage[f][local as usize] / last;
        Ok(self.derived.siblings[f]
            .get(&parent)
            .map(|v| {
                v.iter()
                    .filter(|&&s| s as u64 != local)
                    .map(|&s| self.unified(f, s))
                    .collect()
            })
            .unwrap_or_default())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.assignments;
        let mut meta = Writer::new();
        meta.u64(self.snapshot_id)
            .u64(self.codebook_version)
            .u64(a.facets as u64)
            .u64s(&self.layer_sizes.iter().map(|&n| n as u64).collect::<Vec<_>>());
        let mut echo = Writer::new();
        echo.bytes(self.config_echo.as_bytes());
        let mut counts = Writer::new();
        counts.u64s(&a.counts);
        let mut ids = Writer::new();
        ids.u64s(&a.item_ids);
        let mut tensor = Writer::new();
        tensor.u64s(&a.indices);
        let mut seg_counts = Writer::new();
        seg_counts.u64s(&self.index_map.counts.iter().map(|&c| c as u64).collect::<Vec<_>>());
        let mut items = Writer::new();
        items.u64s(&self.index_map.items);
        let mut remap = Writer::new();
        for r in &self.remaps {
            remap.varint(r.fine_to_original.len() as u64);
            for set in &r.fine_to_original {
                remap.varint(set.len() as u64);
                for &o in set {
                    remap.varint(o as u64);
                }
            }
        }
        let mut lineage = Writer::new();
        for l in &self.lineage {
            lineage.varint(l.len() as u64);
            for &o in l {
                lineage.varint(o as u64);
            }
        }
        container::encode(
            FileKind::Full,
            self.created_at,
            &[
                meta.finish(),
                echo.finish(),
                counts.finish(),
                ids.finish(),
                tensor.finish(),
                seg_counts.finish(),
                items.finish(),
                remap.finish(),
                lineage.finish(),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let d = container::decode(bytes, FileKind::Full)?;
        let [meta, echo, counts, ids, tensor, seg_counts, items, remap, lineage] = d.sections[..] else {
            return Err(DecodeError::Malformed("full snapshot expects 9 sections".into()).into());
        };
        let malformed = |m: &str| Error::Decode(DecodeError::Malformed(m.into()));
        let mut r = Reader::new(meta);
        let snapshot_id = r.u64()?;
        let codebook_version = r.u64()?;
        let facets = r.u64()? as usize;
        let layer_sizes: Vec<usize> = r.u64s()?.into_iter().map(|n| n as usize).collect();
        let config_echo = String::from_utf8(Reader::new(echo).bytes()?.to_vec())
            .map_err(|_| malformed("config echo is not UTF-8"))?;
        let counts = Reader::new(counts).u64s()?;
        let item_ids = Reader::new(ids).u64s()?;
        let indices = Reader::new(tensor).u64s()?;
        if counts.len() != facets {
            return Err(malformed("facet count mismatch"));
        }
        let assignments = AssignmentTable {
            facets,
            offsets: {
                let mut acc = 0;
                counts
                    .iter()
                    .map(|m| {
                        let o = acc;
                        acc += m + 1;
                        o
                    })
                    .collect()
            },
            counts,
            item_ids,
            indices,
        };
        assignments.validate().map_err(|_| malformed("assignment tensor inconsistent"))?;

        let read_varint_lists = |data: &[u8], nested: bool| -> Result<Vec<Vec<Vec<u32>>>> {
            let mut r = Reader::new(data);
            let mut out = Vec::with_capacity(facets);
            for _ in 0..facets {
                let n = r.varint()? as usize;
                let mut facet = Vec::with_capacity(n.min(1 << 20));
                if nested {
                    for _ in 0..n {
                        let k = r.varint()? as usize;
                        let set = (0..k).map(|_| r.varint().map(|v| v as u32)).collect::<Result<Vec<_>, _>>()?;
                        facet.push(set);
                    }
                } else {
                    let flat = (0..n).map(|_| r.varint().map(|v| v as u32)).collect::<Result<Vec<_>, _>>()?;
                    facet.push(flat);
                }
                out.push(facet);
            }
            Ok(out)
        };
        let remaps = read_varint_lists(remap, true)?
            .into_iter()
            .map(|fine_to_original| IndexRemap { fine_to_original })
            .collect();
        let lineage = read_varint_lists(lineage, false)?
            .into_iter()
            .map(|mut v| v.pop().unwrap_or_default())
            .collect();

        let snap = Self::assemble(
            snapshot_id,
            d.created_at,
            codebook_version,
            config_echo,
            layer_sizes,
            assignments,
            remaps,
            lineage,
        )
        .map_err(|e| match e {
            Error::Decode(_) => e,
            other => malformed(&other.to_string()),
        })?;
        let stored_counts = Reader::new(seg_counts).u64s()?;
        let stored_items = Reader::new(items).u64s()?;
        let recount: Vec<u64> = snap.index_map.counts.iter().map(|&c| c as u64).collect();
        if stored_counts != recount || stored_items != snap.index_map.items {
            return Err(malformed("index-to-item tensors disagree with assignments"));
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FullOptions {
    pub bounds: SizeBounds,
    pub seed: u64,
    pub exec: Exec,
    pub config_echo: String,
}

/// Original (un-rebalanced) facet-local index per facet for each embedding row.
pub fn quantize_pool(table: &ItemEmbeddingTable, codebook: &Codebook, exec: Exec) -> Result<Vec<Vec<u32>>> {
    if table.facets != codebook.facets || table.dim != codebook.dim {
        return Err(Error::arg("embedding shape does not match codebook"));
    }
    let (f_n, d, layers) = (table.facets, table.dim, codebook.num_layers());
    let rows: Vec<Result<Vec<u32>>> = exec.map_range(table.items, |r| {
        let mut path = vec![0usize; layers];
        let mut residual = vec![0f32; d];
        (0..f_n)
            .map(|f| {
                quantize_facet(table.facet(r, f), codebook, f, &mut path, &mut residual);
                Ok(encode_unified(&path, &codebook.layer_sizes)? as u32)
            })
            .collect()
    });
    let mut cols = vec![Vec::with_capacity(table.items); f_n];
    for row in rows {
        for (f, o) in row?.into_iter().enumerate() {
            cols[f].push(o);
        }
    }
    Ok(cols)
}

fn pool_table(store: &EmbeddingStore, ids: &[u64]) -> ItemEmbeddingTable {
    let mut t = ItemEmbeddingTable::zeros(ids.len(), store.facets(), store.dim());
    for (r, &id) in ids.iter().enumerate() {
        t.row_mut(r).copy_from_slice(&store.embedding(id));
    }
    t
}

/// Quantizes and rebalances the whole pool. `mask(item_id, facet)` sends an
/// item to the facet's invalid index. Returns the snapshot and the plan it applied.
pub fn publish_full_snapshot(
    src: PublishSource<'_>,
    pool: &[u64],
    tick: u64,
    opts: &FullOptions,
    mask: impl Fn(u64, usize) -> bool,
) -> Result<(FullSnapshot, Rebalanced)> {
    let cb = src.codebook;
    if src.embeddings.facets() != cb.facets || src.embeddings.dim() != cb.dim {
        return Err(Error::arg("embedding shape does not match codebook"));
    }
    let table = pool_table(src.embeddings, pool);
    let originals: Vec<Vec<Option<u32>>> = quantize_pool(&table, cb, opts.exec)?
        .into_iter()
        .map(|c| c.into_iter().map(Some).collect())
        .collect();
    let rb = rebalance(&originals, &table, cb, opts.bounds, |r, f| mask(pool[r], f), opts.seed, opts.exec)?;
    let fine: Vec<Vec<Option<u32>>> = rb.facets.iter().map(|f| f.assignments.clone()).collect();
    let counts = rb.facets.iter().map(|f| f.num_indices as u64).collect();
    let assignments = AssignmentTable::from_facet_columns(pool.to_vec(), &fine, counts)?;
    let snap = FullSnapshot::assemble(
        tick,
        tick,
        src.codebook_version,
        opts.config_echo.clone(),
        cb.layer_sizes.clone(),
        assignments,
        rb.facets.iter().map(|f| f.remap.clone()).collect(),
        rb.facets.iter().map(|f| f.lineage.clone()).collect(),
    )?;
    Ok((snap, rb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSnapshot {
    pub snapshot_id: u64,
    pub full_id: u64,
    pub created_at: u64,
    pub item_ids: Vec<u64>,
    /// `I_delta × F` facet-local original indices.
    pub originals: Vec<u32>,
    pub facets: usize,
    /// Per facet, original index → fresh items (ascending).
    inverse: Vec<BTreeMap<u32, Vec<u64>>>,
}

impl DeltaSnapshot {
    fn assemble(snapshot_id: u64, full_id: u64, created_at: u64, item_ids: Vec<u64>, originals: Vec<u32>, facets: usize) -> Result<Self> {
        if originals.len() != item_ids.len() * facets {
            return Err(Error::arg("delta originals do not match item count"));
        }
        let mut inverse: Vec<BTreeMap<u32, Vec<u64>>> = vec![BTreeMap::new(); facets];
        for (r, &id) in item_ids.iter().enumerate() {
            for (f, inv) in inverse.iter_mut().enumerate() {
                inv.entry(originals[r * facets + f]).or_default().push(id);
            }
        }
        inverse.iter_mut().flat_map(|m| m.values_mut()).for_each(|v| v.sort_unstable());
        Ok(Self {
            snapshot_id,
            full_id,
            created_at,
            item_ids,
            originals,
            facets,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.originals[r * self.facets..(r + 1) * self.facets]
    }

    pub fn position(&self, item_id: u64) -> Option<usize> {
        self.item_ids.iter().position(|&i| i == item_id)
    }

    /// Fresh items quantized to original index `o` on facet `f`.
    pub fn items_for_original(&self, f: usize, o: u32) -> &[u64] {
        self.inverse
            .get(f)
            .and_then(|m| m.get(&o))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Writer::new();
        meta.u64(self.snapshot_id).u64(self.full_id).u64(self.facets as u64);
        let mut ids = Writer::new();
        ids.u64s(&self.item_ids);
        let mut orig = Writer::new();
        orig.u64s(&self.originals.iter().map(|&o| o as u64).collect::<Vec<_>>());
        container::encode(FileKind::Delta, self.created_at, &[meta.finish(), ids.finish(), orig.finish()])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let d = container::decode(bytes, FileKind::Delta)?;
        let [meta, ids, orig] = d.sections[..] else {
            return Err(DecodeError::Malformed("delta snapshot expects 3 sections".into()).into());
        };
        let mut r = Reader::new(meta);
        let (snapshot_id, full_id, facets) = (r.u64()?, r.u64()?, r.u64()? as usize);
        let item_ids = Reader::new(ids).u64s()?;
        let originals: Vec<u32> = Reader::new(orig).u64s()?.into_iter().map(|o| o as u32).collect();
        Self::assemble(snapshot_id, full_id, d.created_at, item_ids, originals, facets)
            .map_err(|e| DecodeError::Malformed(e.to_string()).into())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Indexes `fresh` items with their original codeword indices, without
/// rebalancing. Items already pooled in `full` are skipped.
pub fn publish_delta_snapshot(
    src: PublishSource<'_>,
    full: &FullSnapshot,
    fresh: &[u64],
    tick: u64,
    exec: Exec,
) -> Result<DeltaSnapshot> {
    let mut ids: Vec<u64> = fresh.iter().copied().filter(|&id| full.lookup(id).is_none()).collect();
    ids.sort_unstable();
    ids.dedup();
    let table = pool_table(src.embeddings, &ids);
    let cols = quantize_pool(&table, src.codebook, exec)?;
    let facets = src.codebook.facets;
    let mut originals = vec![0u32; ids.len() * facets];
    for (f, col) in cols.iter().enumerate() {
        for (r, &o) in col.iter().enumerate() {
            originals[r * facets + f] = o;
        }
    }
    DeltaSnapshot::assemble(tick, full.snapshot_id, tick, ids, originals, facets)
}

/// A full snapshot and its optional delta, swapped as one unit.
#[derive(Debug, Clone)]
pub struct SnapshotPair {
    pub full: Arc<FullSnapshot>,
    pub delta: Option<Arc<DeltaSnapshot>>,
}

impl SnapshotPair {
    pub fn new(full: Arc<FullSnapshot>, delta: Option<Arc<DeltaSnapshot>>) -> Result<Self> {
        if let Some(d) = &delta {
            if d.full_id != full.snapshot_id {
                return Err(Error::SnapshotMismatch {
                    full_id: full.snapshot_id,
                    delta_full_id: d.full_id,
                });
            }
        }
        Ok(Self { full, delta })
    }
}

/// Single-publisher, many-reader holder of the current snapshot pair.
#[derive(Debug)]
pub struct SnapshotStore {
    current: RwLock<Arc<SnapshotPair>>,
}

impl SnapshotStore {
    pub fn new(pair: SnapshotPair) -> Self {
        Self {
            current: RwLock::new(Arc::new(pair)),
        }
    }

    pub fn current(&self) -> Arc<SnapshotPair> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn swap(&self, pair: SnapshotPair) -> Arc<SnapshotPair> {
        let mut g = self.current.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *g, Arc::new(pair))
    }

    /// Installs a new full snapshot and drops the delta.
    pub fn publish_full(&self, full: FullSnapshot) {
        self.swap(SnapshotPair {
            full: Arc::new(full),
            delta: None,
        });
    }

    pub fn publish_delta(&self, delta: DeltaSnapshot) -> Result<()> {
        let full = self.current().full.clone();
        self.swap(SnapshotPair::new(full, Some(Arc::new(delta)))?);
        Ok(())
    }
}
