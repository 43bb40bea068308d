//! Split-and-merge rebalancing of per-facet index populations.
//!
//! Indices here are facet-local "fine" ids. Ids below `N = Π N_l` are the
//! original codeword paths; split children are appended from `N` upward.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::ItemEmbeddingTable;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::quantizer::Codebook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub lower: usize,
    pub upper: usize,
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self { lower: 5, upper: 50 }
    }
}

impl SizeBounds {
    pub fn new(lower: usize, upper: usize) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Production-scale bounds.
    pub fn production() -> Self {
        Self {
            lower: 100,
            upper: 20_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower == 0 || self.lower >= self.upper {
            return Err(Error::config(format!(
                "size bounds need 0 < lower < upper, got ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// Child size aimed for when splitting.
    pub fn target(&self) -> usize {
        (self.lower + self.upper) / 2
    }

    pub fn contains(&self, size: usize) -> bool {
        (self.lower..=self.upper).contains(&size)
    }
}

/// Items per index over `num_indices` slots; `None` entries are skipped.
pub fn compute_sizes(assignments: &[Option<u32>], num_indices: usize) -> Vec<usize> {
    let mut sizes = vec![0; num_indices];
    for &a in assignments.iter().flatten() {
        sizes[a as usize] += 1;
    }
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k × dim`.
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    /// Objective after each assignment pass.
    pub objective: Vec<f64>,
}

fn nearest_centroid(p: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(dim).enumerate() {
        let d: f64 = p.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding over `points` (`n × dim`).
/// Clusters left empty by an assignment pass are re-seeded from the point
/// farthest from its centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::arg("points are not a multiple of dim"));
    }
    let n = points.len() / dim;
    if n == 0 || k == 0 || k > n {
        return Err(Error::arg(format!("kmeans needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(pt(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| nearest_centroid(pt(i), &centroids, dim).1).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random_range(0.0..total);
            d2.iter()
                .position(|&w| {
                    x -= w;
                    x < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(pt(pick));
        let c = centroids.len() / dim - 1;
        for (i, d) in d2.iter_mut().enumerate() {
            let nd: f64 = pt(i)
                .iter()
                .zip(&centroids[c * dim..])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *d = d.min(nd);
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest_centroid(pt(i), &centroids, dim);
            changed |= labels[i] != c;
            labels[i] = c;
            dists[i] = d;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                counts[c] = 1;
                labels[i] = c;
                dists[i] = 0.0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(pt(i));
                changed = true;
            }
        }
        objective.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        for (i, &c) in labels.iter().enumerate() {
            sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(pt(i))
                .for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeans {
        centroids,
        labels,
        objective,
    })
}

const KMEANS_ITERS: usize = 25;
const SPLIT_DEPTH_CAP: usize = 8;

/// Partition of one oversized index into children.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// Child label per member, in `0..num_children`.
    pub labels: Vec<usize>,
    pub num_children: usize,
}

/// Splits `n` members (residuals `n × dim`) so every child holds at most
/// `bounds.upper` items, then moves items from large children into
/// undersized ones where possible.
pub fn split_oversized(residuals: &[f64], dim: usize, bounds: SizeBounds, seed: u64) -> Result<SplitResult> {
    let n = residuals.len() / dim.max(1);
    if n <= bounds.upper {
        return Err(Error::arg(format!(
            "split needs more than {} members, got {n}",
            bounds.upper
        )));
    }
    let members: Vec<usize> = (0..n).collect();
    let mut groups = Vec::new();
    split_rec(residuals, dim, &members, bounds, seed, 0, &mut groups)?;
    let mut labels = vec![0; n];
    for (c, g) in groups.iter().enumerate() {
        for &i in g {
            labels[i] = c;
        }
    }
    fill_undersized(residuals, dim, &mut labels, groups.len(), bounds);
    Ok(SplitResult {
        labels,
        num_children: groups.len(),
    })
}

fn round_robin(members: &[usize], parts: usize, out: &mut Vec<Vec<usize>>) {
    let base = out.len();
    out.extend((0..parts).map(|_| Vec::new()));
    for (j, &m) in members.iter().enumerate() {
        out[base + j % parts].push(m);
    }
}

fn split_rec(
    residuals: &[f64],
    dim: usize,
    members: &[usize],
    bounds: SizeBounds,
    seed: u64,
    depth: usize,
    out: &mut Vec<Vec<usize>>,
) -> Result<()> {
    let parts = members.len().div_ceil(bounds.target());
    if depth >= SPLIT_DEPTH_CAP {
        round_robin(members, parts, out);
        return Ok(());
    }
    let pts: Vec<f64> = members
        .iter()
        .flat_map(|&i| residuals[i * dim..(i + 1) * dim].iter().copied())
        .collect();
    if pts.chunks_exact(dim).all(|p| p == &pts[..dim]) {
        round_robin(members, parts, out);
        return Ok(());
    }
    let km = kmeans(&pts, dim, parts, KMEANS_ITERS, seed)?;
    let mut clusters = vec![Vec::new(); parts];
    for (j, &c) in km.labels.iter().enumerate() {
        clusters[c].push(members[j]);
    }
    if clusters.iter().any(|c| c.len() == members.len()) {
        round_robin(members, parts, out);
        return Ok(());
    }
    for (c, cluster) in clusters.into_iter().enumerate() {
        if cluster.len() > bounds.upper {
            let s = seed.wrapping_mul(31).wrapping_add(c as u64 + 1);
            split_rec(residuals, dim, &cluster, bounds, s, depth + 1, out)?;
        } else if !cluster.is_empty() {
            out.push(cluster);
        }
    }
    Ok(())
}

fn mean_of(residuals: &[f64], dim: usize, members: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    let mut n = 0usize;
    for i in members {
        m.iter_mut()
            .zip(&residuals[i * dim..(i + 1) * dim])
            .for_each(|(a, b)| *a += b);
        n += 1;
    }
    if n > 0 {
        m.iter_mut().for_each(|a| *a /= n as f64);
    }
    m
}

/// Tops up children below `lower` with the nearest items of the largest child
/// that can spare them.
fn fill_undersized(residuals: &[f64], dim: usize, labels: &mut [usize], k: usize, bounds: SizeBounds) {
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&c| sizes[c] += 1);
    let mut order: Vec<usize> = (0..k).filter(|&c| sizes[c] < bounds.lower).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let centroid = mean_of(residuals, dim, (0..labels.len()).filter(|&i| labels[i] == c));
        while sizes[c] < bounds.lower {
            let Some(donor) = (0..k)
                .filter(|&d| d != c && sizes[d] > bounds.lower)
                .max_by_key(|&d| (sizes[d], std::cmp::Reverse(d)))
            else {
                break;
            };
            let take = (bounds.lower - sizes[c]).min(sizes[donor] - bounds.lower);
            let mut cand: Vec<(f64, usize)> = (0..labels.len())
                .filter(|&i| labels[i] == donor)
                .map(|i| {
                    let d: f64 = residuals[i * dim..(i + 1) * dim]
                        .iter()
                        .zip(&centroid)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, i)
                })
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, i) in &cand[..take] {
                labels[i] = c;
            }
            sizes[donor] -= take;
            sizes[c] += take;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    /// Undersized siblings merged into the smallest of them.
    Siblings,
    /// Still-undersized group absorbed by the nearest sibling with room.
    NearestSibling,
    /// No sibling had room; absorbed by the nearest index under another parent.
    CrossParent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub original: u32,
    pub children: Vec<u32>,
    /// `(item row, child id)` for every member of the original.
    pub reassignment: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEntry {
    /// Indices whose items move to `target`.
    pub sources: Vec<u32>,
    pub target: u32,
    pub kind: MergeKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FacetPlan {
    pub splits: Vec<SplitEntry>,
    pub merges: Vec<MergeEntry>,
    /// Rows removed by the mask.
    pub pruned: Vec<usize>,
    /// Indices that could not be placed anywhere within bounds; their items
    /// moved to the invalid index.
    pub invalidated: Vec<u32>,
}

/// Post-rebalance index → set of pre-rebalance indices it covers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexRemap {
    pub fine_to_original: Vec<Vec<u32>>,
}

impl IndexRemap {
    pub fn originals(&self, m: u32) -> Option<&[u32]> {
        self.fine_to_original.get(m as usize).map(Vec::as_slice)
    }

    /// Original index → fine indices covering it.
    pub fn inverse(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut inv: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (m, set) in self.fine_to_original.iter().enumerate() {
            for &o in set {
                inv.entry(o).or_default().push(m as u32);
            }
        }
        inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetRebalance {
    /// Fine index per item row; `None` is the invalid index.
    pub assignments: Vec<Option<u32>>,
    pub num_indices: usize,
    pub plan: FacetPlan,
    pub remap: IndexRemap,
    /// Original index each fine id descends from.
    pub lineage: Vec<u32>,
}

/// Prunes masked rows: they land on the invalid index.
pub fn prune_masked(originals: &[Option<u32>], mask: impl Fn(usize) -> bool) -> (Vec<Option<u32>>, Vec<usize>) {
    let mut pruned = Vec::new();
    let out = originals
        .iter()
        .enumerate()
        .map(|(r, &a)| {
            if a.is_some() && mask(r) {
                pruned.push(r);
                None
            } else {
                a
            }
        })
        .collect();
    (out, pruned)
}

/// Inputs for one facet.
#[derive(Debug, Clone, Copy)]
pub struct FacetInput<'a> {
    pub facet: usize,
    /// Original index per item row (`None` for already-masked rows).
    pub originals: &'a [Option<u32>],
    pub table: &'a ItemEmbeddingTable,
    pub codebook: &'a Codebook,
}

struct Slot {
    size: usize,
    centroid: Vec<f64>,
    parent: u32,
}

fn centroid_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rebalances one facet. Rows with `None` in `originals` stay invalid.
pub fn rebalance_facet(input: FacetInput<'_>, bounds: SizeBounds, seed: u64, exec: Exec) -> Result<FacetRebalance> {
    bounds.validate()?;
    let cb = input.codebook;
    let (f, dim) = (input.facet, cb.dim);
    if input.originals.len() != input.table.items {
        return Err(Error::arg("assignment count does not match table rows"));
    }
    let n_orig = cb.num_paths();
    let last = *cb.layer_sizes.last().ok_or_else(|| Error::arg("empty codebook"))?;
    let sizes = compute_sizes(input.originals, n_orig);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_orig];
    for (r, &a) in input.originals.iter().enumerate() {
        if let Some(a) = a {
            if a as usize >= n_orig {
                return Err(Error::arg(format!("original index {a} out of range")));
            }
            members[a as usize].push(r);
        }
    }
    let path_of = |m: usize| -> Vec<usize> {
        let mut path = vec![0; cb.num_layers()];
        let mut rest = m;
        for l in (0..cb.num_layers()).rev() {
            path[l] = rest % cb.layer_sizes[l];
            rest /= cb.layer_sizes[l];
        }
        path
    };
    let recon: Vec<Vec<f64>> = exec.map_range(n_orig, |m| {
        cb.path_reconstruction(f, &path_of(m))
            .into_iter()
            .map(f64::from)
            .collect()
    });
    let residual = |r: usize, m: usize| -> Vec<f64> {
        input
            .table
            .facet(r, f)
            .iter()
            .zip(&recon[m])
            .map(|(&v, c)| v as f64 - c)
            .collect()
    };

    // Splits are independent per oversized index.
    let oversized: Vec<usize> = (0..n_orig).filter(|&m| sizes[m] > bounds.upper).collect();
    let split_results: Vec<Result<SplitResult>> = exec.map(&oversized, |&m| {
        let pts: Vec<f64> = members[m].iter().flat_map(|&r| residual(r, m)).collect();
        split_oversized(&pts, dim, bounds, seed ^ (f as u64) << 32 ^ m as u64)
    });

    let mut assignments: Vec<Option<u32>> = input.originals.to_vec();
    let mut slots: Vec<Slot> = (0..n_orig)
        .map(|m| Slot {
            size: sizes[m],
            centroid: recon[m].clone(),
            parent: (m / last) as u32,
        })
        .collect();
    let mut remap: Vec<BTreeSet<u32>> = (0..n_orig as u32).map(|m| BTreeSet::from([m])).collect();
    let mut lineage: Vec<u32> = (0..n_orig as u32).collect();
    let mut plan = FacetPlan::default();

    for (&m, res) in oversized.iter().zip(split_results) {
        let res = res?;
        let first = slots.len() as u32;
        let children: Vec<u32> = (0..res.num_children as u32).map(|c| first + c).collect();
        let mut reassignment = Vec::with_capacity(members[m].len());
        for c in 0..res.num_children {
            let rows: Vec<usize> = members[m]
                .iter()
                .zip(&res.labels)
                .filter(|(_, &l)| l == c)
                .map(|(&r, _)| r)
                .collect();
            let mean = mean_of(
                &rows.iter().flat_map(|&r| residual(r, m)).collect::<Vec<_>>(),
                dim,
                0..rows.len(),
            );
            slots.push(Slot {
                size: rows.len(),
                centroid: recon[m].iter().zip(&mean).map(|(a, b)| a + b).collect(),
                parent: slots[m].parent,
            });
            remap.push(BTreeSet::from([m as u32]));
            lineage.push(m as u32);
            for r in rows {
                assignments[r] = Some(first + c as u32);
                reassignment.push((r, first + c as u32));
            }
        }
        reassignment.sort_unstable();
        slots[m].size = 0;
        remap[m].clear();
        plan.splits.push(SplitEntry {
            original: m as u32,
            children,
            reassignment,
        });
    }

    // Merge undersized indices within each parent group.
    let mut redirect: Vec<u32> = (0..slots.len() as u32).collect();
    let mut by_parent: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (id, s) in slots.iter().enumerate() {
        if s.size > 0 {
            by_parent.entry(s.parent).or_default().push(id as u32);
        }
    }
    let mut pending: Vec<Vec<u32>> = Vec::new();
    let merge_into = |slots: &mut Vec<Slot>, redirect: &mut Vec<u32>, remap: &mut Vec<BTreeSet<u32>>, sources: &[u32], target: u32| {
        let mut total = slots[target as usize].size as f64;
        let mut centroid: Vec<f64> = slots[target as usize].centroid.iter().map(|c| c * total).collect();
        for &s in sources {
            let sz = slots[s as usize].size as f64;
            centroid
                .iter_mut()
                .zip(&slots[s as usize].centroid)
                .for_each(|(a, b)| *a += b * sz);
            total += sz;
            slots[target as usize].size += slots[s as usize].size;
            slots[s as usize].size = 0;
            redirect[s as usize] = target;
            let moved = std::mem::take(&mut remap[s as usize]);
            remap[target as usize].extend(moved);
        }
        if total > 0.0 {
            slots[target as usize].centroid = centroid.into_iter().map(|c| c / total).collect();
        }
    };

    for ids in by_parent.values() {
        let mut small: Vec<u32> = ids
            .iter()
            .copied()
            .filter(|&i| slots[i as usize].size < bounds.lower)
            .collect();
        small.sort_by_key(|&i| (slots[i as usize].size, i));
        let mut groups: Vec<Vec<u32>> = Vec::new();
        let mut cur: Vec<u32> = Vec::new();
        let mut total = 0;
        for i in small {
            let sz = slots[i as usize].size;
            if !cur.is_empty() && total + sz > bounds.upper {
                pending.push(std::mem::take(&mut cur));
                total = 0;
            }
            cur.push(i);
            total += sz;
            if total >= bounds.lower {
                groups.push(std::mem::take(&mut cur));
                total = 0;
            }
        }
        if !cur.is_empty() {
            pending.push(cur);
        }
        for g in groups {
            merge_into(&mut slots, &mut redirect, &mut remap, &g[1..], g[0]);
            plan.merges.push(MergeEntry {
                sources: g[1..].to_vec(),
                target: g[0],
                kind: MergeKind::Siblings,
            });
        }
    }

    // Groups still below the lower bound: nearest sibling with room, then the
    // nearest index anywhere in the facet, else invalidate.
    let pending_ids: BTreeSet<u32> = pending.iter().flatten().copied().collect();
    for group in pending {
        let total: usize = group.iter().map(|&i| slots[i as usize].size).sum();
        let mut centroid = vec![0.0; dim];
        for &i in &group {
            let s = &slots[i as usize];
            centroid
                .iter_mut()
                .zip(&s.centroid)
                .for_each(|(a, b)| *a += b * s.size as f64 / total as f64);
        }
        let parent = slots[group[0] as usize].parent;
        let viable = |id: usize, s: &Slot| {
            s.size >= bounds.lower && s.size + total <= bounds.upper && !pending_ids.contains(&(id as u32))
        };
        let nearest = |same_parent: bool, slots: &[Slot]| {
            slots
                .iter()
                .enumerate()
                .filter(|(id, s)| viable(*id, s) && (s.parent == parent) == same_parent)
                .map(|(id, s)| (centroid_distance(&centroid, &s.centroid), id as u32))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
        };
        let target = nearest(true, &slots)
            .map(|t| (t, MergeKind::NearestSibling))
            .or_else(|| nearest(false, &slots).map(|t| (t, MergeKind::CrossParent)));
        match target {
            Some((t, kind)) => {
                merge_into(&mut slots, &mut redirect, &mut remap, &group, t);
                plan.merges.push(MergeEntry {
                    sources: group,
                    target: t,
                    kind,
                });
            }
            None => {
                for &i in &group {
                    slots[i as usize].size = 0;
                    remap[i as usize].clear();
                    redirect[i as usize] = u32::MAX;
                }
                plan.invalidated.extend(group);
            }
        }
    }

    for a in assignments.iter_mut() {
        if let Some(m) = *a {
            let r = redirect[m as usize];
            *a = (r != u32::MAX).then_some(r);
        }
    }
    plan.invalidated.sort_unstable();

    Ok(FacetRebalance {
        assignments,
        num_indices: slots.len(),
        plan,
        remap: IndexRemap {
            fine_to_original: remap.into_iter().map(|s| s.into_iter().collect()).collect(),
        },
        lineage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rebalanced {
    pub facets: Vec<FacetRebalance>,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum PlanRecord<'a> {
    Split {
        facet: usize,
        original: u32,
        children: &'a [u32],
        items: usize,
    },
    Merge {
        facet: usize,
        sources: &'a [u32],
        target: u32,
        kind: MergeKind,
    },
    Invalidate {
        facet: usize,
        index: Option<u32>,
        rows: usize,
    },
}

impl Rebalanced {
    /// One JSON record per split, merge and invalidation.
    pub fn write_plan<W: Write>(&self, mut w: W) -> Result<()> {
        for (facet, fr) in self.facets.iter().enumerate() {
            let mut emit = |rec: PlanRecord<'_>| -> Result<()> {
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
                Ok(())
            };
            for s in &fr.plan.splits {
                emit(PlanRecord::Split {
                    facet,
                    original: s.original,
                    children: &s.children,
                    items: s.reassignment.len(),
                })?;
            }
            for m in &fr.plan.merges {
                emit(PlanRecord::Merge {
                    facet,
                    sources: &m.sources,
                    target: m.target,
                    kind: m.kind,
                })?;
            }
            if !fr.plan.pruned.is_empty() {
                emit(PlanRecord::Invalidate {
                    facet,
                    index: None,
                    rows: fr.plan.pruned.len(),
                })?;
            }
            for &i in &fr.plan.invalidated {
                emit(PlanRecord::Invalidate {
                    facet,
                    index: Some(i),
                    rows: 0,
                })?;
            }
        }
        Ok(())
    }
}

/// Rebalances every facet. `originals[f][row]` is the original index of the
/// row on facet `f`; `mask(row, f)` sends a row to the invalid index.
pub fn rebalance(
    originals: &[Vec<Option<u32>>],
    table: &ItemEmbeddingTable,
    codebook: &Codebook,
    bounds: SizeBounds,
    mask: impl Fn(usize, usize) -> bool,
    seed: u64,
    exec: Exec,
) -> Result<Rebalanced> {
    if originals.len() != codebook.facets {
        return Err(Error::arg("need one assignment column per facet"));
    }
    let facets = originals
        .iter()
        .enumerate()
        .map(|(f, col)| {
            let (kept, pruned) = prune_masked(col, |r| mask(r, f));
            let mut out = rebalance_facet(
                FacetInput {
                    facet: f,
                    originals: &kept,
                    table,
                    codebook,
                },
                bounds,
                seed,
                exec,
            )?;
            out.plan.pruned = pruned;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Rebalanced { facets })
}

/// Expected non-masked size of each fine index if the plan is replayed on
/// `originals`: the reference used by tests and diagnostics.
pub fn replay_plan(originals: &[Option<u32>], plan: &FacetPlan, num_indices: usize) -> Vec<Option<u32>> {
    let mut out: Vec<Option<u32>> = originals.to_vec();
    for &r in &plan.pruned {
        out[r] = None;
    }
    for s in &plan.splits {
        for &(r, c) in &s.reassignment {
            out[r] = Some(c);
        }
    }
    let mut redirect: Vec<Option<u32>> = (0..num_indices as u32).map(Some).collect();
    for m in &plan.merges {
        for &s in &m.sources {
            redirect[s as usize] = Some(m.target);
        }
    }
    for &i in &plan.invalidated {
        redirect[i as usize] = None;
    }
    for a in out.iter_mut() {
        // Follow merge chains to their final target.
        while let Some(m) = *a {
            let next = redirect[m as usize];
            if next == Some(m) {
                break;
            }
            *a = next;
        }
    }
    out
}
