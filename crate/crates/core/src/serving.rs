//! Retrieval over a snapshot pair: index lookup, index selection, item
//! selection and per-index reranking.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::dot;
use crate::snapshot::SnapshotPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Total indices selected across facets.
    pub k: usize,
    /// Per-facet draw counts; `None` splits `k` evenly with the remainder on facet 0.
    pub k_per_facet: Option<Vec<usize>>,
    /// Items kept per selected index.
    pub n: usize,
    pub tau: f64,
    pub alpha: f64,
    /// Per-facet item quota; `None` means `n` per selected index.
    pub q_tot: Option<usize>,
    /// Use histogram-weighted quotas instead of a flat `n`.
    pub quota_mode: bool,
    pub recent_boost: f64,
    pub recent_window: usize,
    pub longtail_threshold: usize,
    /// Maximum size of an expanded per-facet set; `None` uses that facet's draw count.
    pub longtail_budget: Option<usize>,
    pub longtail_expansion: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 200,
            k_per_facet: None,
            n: 15,
            tau: 1.0,
            alpha: 1.0,
            q_tot: None,
            quota_mode: false,
            recent_boost: 2.0,
            recent_window: 5,
            longtail_threshold: 8,
            longtail_budget: None,
            longtail_expansion: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, facets: usize) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(Error::config("k and n must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config("alpha must be non-negative"));
        }
        if !(self.recent_boost >= 1.0) {
            return Err(Error::config("recent_boost must be at least 1"));
        }
        if let Some(k) = &self.k_per_facet {
            if k.len() != facets || k.iter().sum::<usize>() != self.k {
                return Err(Error::config("k_per_facet must have one entry per facet summing to k"));
            }
        }
        Ok(())
    }

    pub fn per_facet(&self, facets: usize) -> Vec<usize> {
        match &self.k_per_facet {
            Some(k) => k.clone(),
            None => {
                let mut k = vec![self.k / facets; facets];
                k[0] += self.k % facets;
                k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRequest {
    /// Oldest first.
    pub triggers: Vec<u64>,
    pub seed: u64,
}

/// Per known trigger, its unified index on each facet (`None` when the trigger
/// has no valid index there).
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub triggers: Vec<u64>,
    pub vectors: Vec<Vec<Option<u64>>>,
    pub skipped: usize,
}

/// Maps triggers to index vectors. Pooled items use the full snapshot; fresh
/// items use the smallest full index covering their original index.
pub fn index_lookup(triggers: &[u64], pair: &SnapshotPair) -> Result<Lookup> {
    let full = &pair.full;
    let mut out = Lookup {
        triggers: Vec::new(),
        vectors: Vec::new(),
        skipped: 0,
    };
    for &t in triggers {
        let v: Option<Vec<Option<u64>>> = if let Some(row) = full.lookup(t) {
            Some(
                row.iter()
                    .map(|&m| (!full.assignments.is_invalid(m)).then_some(m))
                    .collect(),
            )
        } else {
            pair.delta.as_ref().and_then(|d| d.position(t)).map(|r| {
                let delta = pair.delta.as_ref().unwrap();
                (0..full.facets())
                    .map(|f| full.fine_for_original(f, delta.row(r)[f]).first().copied())
                    .collect()
            })
        };
        match v {
            Some(v) => {
                out.triggers.push(t);
                out.vectors.push(v);
            }
            None => out.skipped += 1,
        }
    }
    if out.triggers.is_empty() {
        return Err(Error::EmptyTriggers { skipped: out.skipped });
    }
    Ok(out)
}

/// Per facet, index → boosted trigger count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexHistogram {
    pub counts: Vec<BTreeMap<u64, f64>>,
}

impl IndexHistogram {
    /// Normalized distribution of facet `f`, in ascending index order.
    pub fn distribution(&self, f: usize) -> (Vec<u64>, Vec<f64>) {
        let h = &self.counts[f];
        let total: f64 = h.values().sum();
        (h.keys().copied().collect(), h.values().map(|&c| c / total).collect())
    }
}

/// Counts triggers per index; the `window` most recent triggers count `boost` times.
pub fn build_histograms(vectors: &[Vec<Option<u64>>], facets: usize, boost: f64, window: usize) -> IndexHistogram {
    let mut counts = vec![BTreeMap::new(); facets];
    let recent_from = vectors.len().saturating_sub(window);
    for (t, v) in vectors.iter().enumerate() {
        let w = if t >= recent_from { boost } else { 1.0 };
        for (f, m) in v.iter().enumerate() {
            if let Some(m) = m {
                *counts[f].entry(*m).or_insert(0.0) += w;
            }
        }
    }
    IndexHistogram { counts }
}

/// `π(m) ∝ p(m)^(1/τ)`.
pub fn temperature_distribution(p: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::arg("tau must be positive"));
    }
    if tau == 1.0 {
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() <= 1e-12 {
            return Ok(p.to_vec());
        }
        return Ok(p.iter().map(|x| x / total).collect());
    }
    let logs: Vec<f64> = p.iter().map(|&x| x.ln() / tau).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.iter().map(|x| x / total).collect())
}

/// Draws up to `k` distinct positions from `weights`, renormalizing after each draw.
pub fn sample_without_replacement<R: Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k.min(w.len()));
    let mut remaining: f64 = w.iter().sum();
    while out.len() < k && remaining > 0.0 {
        let mut x = rng.random::<f64>() * remaining;
        let mut pick = None;
        for (i, &wi) in w.iter().enumerate() {
            if wi <= 0.0 {
                continue;
            }
            pick = Some(i);
            x -= wi;
            if x < 0.0 {
                break;
            }
        }
        let i = pick.expect("positive mass remains");
        out.push(i);
        remaining -= w[i];
        w[i] = 0.0;
        if out.len() == weights.len() {
            break;
        }
        // Guard against drift from repeated subtraction.
        if remaining <= 1e-12 {
            remaining = w.iter().sum();
        }
    }
    out
}

/// Per facet, selected indices in draw order.
pub fn select_indices<R: Rng>(hist: &IndexHistogram, k_per_facet: &[usize], tau: f64, rng: &mut R) -> Result<Vec<Vec<u64>>> {
    hist.counts
        .iter()
        .enumerate()
        .map(|(f, h)| {
            if h.is_empty() {
                return Ok(Vec::new());
            }
            let (ids, p) = hist.distribution(f);
            let pi = temperature_distribution(&p, tau)?;
            Ok(sample_without_replacement(&pi, k_per_facet[f], rng)
                .into_iter()
                .map(|i| ids[i])
                .collect())
        })
        .collect()
}

/// Appends siblings of each selected index (ascending, deduplicated) until
/// the set holds `budget` indices.
pub fn expand_longtail(selected: &[u64], pair: &SnapshotPair, budget: usize) -> Result<Vec<u64>> {
    let mut out = selected.to_vec();
    for &m in selected {
        if out.len() >= budget {
            break;
        }
        for s in pair.full.siblings(m)? {
            if out.len() >= budget {
                break;
            }
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// `Q(m) = ceil(q_tot · h(m)^α / Σ h^α)`, at least 1.
pub fn allocate_quota(h: &[f64], q_tot: usize, alpha: f64) -> Vec<usize> {
    let w: Vec<f64> = h.iter().map(|&x| if alpha == 0.0 { 1.0 } else { x.powf(alpha) }).collect();
    let total: f64 = w.iter().sum();
    w.iter()
        .map(|&wi| {
            let q = q_tot as f64 * wi / total;
            // Tolerate representation error on exact integers.
            ((q - 1e-9).ceil() as usize).max(1)
        })
        .collect()
}

/// Candidates of one selected index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexCandidates {
    pub index: u64,
    pub facet: usize,
    /// Ascending, deduplicated.
    pub items: Vec<u64>,
}

/// Full-snapshot segment of each index plus delta items whose original index
/// it covers.
pub fn item_selection(selected: &[u64], pair: &SnapshotPair) -> Result<Vec<IndexCandidates>> {
    let full = &pair.full;
    if let Some(d) = &pair.delta {
        if d.full_id != full.snapshot_id {
            return Err(Error::SnapshotMismatch {
                full_id: full.snapshot_id,
                delta_full_id: d.full_id,
            });
        }
    }
    selected
        .iter()
        .map(|&m| {
            let (facet, _) = full.facet_of(m)?;
            let mut items = full.items(m)?.to_vec();
            if let Some(d) = &pair.delta {
                if !full.assignments.is_invalid(m) {
                    for &o in full.fresh_indices_for(m)? {
                        items.extend_from_slice(d.items_for_original(facet, o));
                    }
                    items.sort_unstable();
                    items.dedup();
                }
            }
            Ok(IndexCandidates { index: m, facet, items })
        })
        .collect()
}

/// Top `keep` of `items` by score, ties to the lower id.
pub fn top_n(items: &[u64], scores: &[f64], keep: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = items.iter().copied().zip(scores.iter().copied()).collect();
    let cmp = |a: &(u64, f64), b: &(u64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if keep < all.len() {
        all.select_nth_unstable_by(keep, cmp);
        all.truncate(keep);
    }
    all.sort_by(cmp);
    all
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub id: u64,
    pub score: f64,
    pub index: u64,
    pub facet: usize,
    /// Every selected index that surfaced this item.
    pub sources: Vec<u64>,
}

/// Scores each index's candidates against its facet's query and keeps the
/// top `quota[i]`. The merged list keeps (index, rank) order; duplicates keep
/// their best-scoring occurrence.
pub fn per_index_rerank(
    candidates: &[IndexCandidates],
    queries: &[Vec<f32>],
    quotas: &[usize],
    embeddings: &EmbeddingStore,
    exec: Exec,
) -> Vec<RetrievedItem> {
    let dim = embeddings.dim();
    let ranked: Vec<Vec<(u64, f64)>> = exec.map_range(candidates.len(), |i| {
        let c = &candidates[i];
        let q = &queries[c.facet];
        let scores: Vec<f64> = c
            .items
            .iter()
            .map(|&id| {
                let e = embeddings.embedding(id);
                dot(q, &e[c.facet * dim..(c.facet + 1) * dim]) as f64
            })
            .collect();
        top_n(&c.items, &scores, quotas[i])
    });
    let mut merged: Vec<RetrievedItem> = Vec::new();
    let mut best: HashMap<u64, usize> = HashMap::new();
    for (c, list) in candidates.iter().zip(ranked) {
        for (id, score) in list {
            match best.get(&id) {
                Some(&pos) => {
                    let cur = &mut merged[pos];
                    cur.sources.push(c.index);
                    if score > cur.score {
                        cur.score = score;
                        cur.index = c.index;
                        cur.facet = c.facet;
                    }
                }
                None => {
                    best.insert(id, merged.len());
                    merged.push(RetrievedItem {
                        id,
                        score,
                        index: c.index,
                        facet: c.facet,
                        sources: vec![c.index],
                    });
                }
            }
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub skipped_triggers: usize,
    pub indices_selected: usize,
    pub candidates_scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResponse {
    pub items: Vec<RetrievedItem>,
    pub stats: RetrievalStats,
}

/// Mean facet embedding of the triggers.
pub fn trigger_queries(triggers: &[u64], embeddings: &EmbeddingStore) -> Vec<Vec<f32>> {
    let (facets, dim) = (embeddings.facets(), embeddings.dim());
    let mut q = vec![vec![0f32; dim]; facets];
    for &t in triggers {
        let e = embeddings.embedding(t);
        for (f, qf) in q.iter_mut().enumerate() {
            qf.iter_mut()
                .zip(&e[f * dim..(f + 1) * dim])
                .for_each(|(a, b)| *a += b);
        }
    }
    let n = triggers.len().max(1) as f32;
    q.iter_mut().flatten().for_each(|x| *x /= n);
    q
}

/// The full retrieval path for one request.
pub fn retrieve(
    req: &RetrievalRequest,
    cfg: &SelectionConfig,
    pair: &SnapshotPair,
    embeddings: &EmbeddingStore,
    exec: Exec,
) -> Result<RetrievalResponse> {
    let facets = pair.full.facets();
    cfg.validate(facets)?;
    let lookup = index_lookup(&req.triggers, pair)?;
    let hist = build_histograms(&lookup.vectors, facets, cfg.recent_boost, cfg.recent_window);
    let k_f = cfg.per_facet(facets);
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut selected = select_indices(&hist, &k_f, cfg.tau, &mut rng)?;

    // Histogram weight of each selected index; expanded siblings inherit it.
    let mut weights: Vec<Vec<f64>> = selected
        .iter()
        .enumerate()
        .map(|(f, s)| s.iter().map(|m| hist.counts[f][m]).collect())
        .collect();
    if cfg.longtail_expansion && lookup.triggers.len() < cfg.longtail_threshold {
        for f in 0..facets {
            let budget = cfg.longtail_budget.unwrap_or(k_f[f]);
            let expanded = expand_longtail(&selected[f], pair, budget)?;
            let mut w = weights[f].clone();
            for &m in &expanded[selected[f].len()..] {
                let origin = selected[f]
                    .iter()
                    .position(|&s| pair.full.siblings(s).map(|v| v.contains(&m)).unwrap_or(false))
                    .unwrap_or(0);
                w.push(weights[f].get(origin).copied().unwrap_or(1.0));
            }
            selected[f] = expanded;
            weights[f] = w;
        }
    }

    let mut flat = Vec::new();
    let mut quotas = Vec::new();
    for f in 0..facets {
        if selected[f].is_empty() {
            continue;
        }
        flat.extend_from_slice(&selected[f]);
        if cfg.quota_mode {
            let q_tot = cfg.q_tot.unwrap_or(cfg.n * k_f[f]);
            quotas.extend(allocate_quota(&weights[f], q_tot, cfg.alpha));
        } else {
            quotas.extend(std::iter::repeat_n(cfg.n, selected[f].len()));
        }
    }
    let candidates = item_selection(&flat, pair)?;
    let scanned = candidates.iter().map(|c| c.items.len()).sum();
    let queries = trigger_queries(&lookup.triggers, embeddings);
    let items = per_index_rerank(&candidates, &queries, &quotas, embeddings, exec);
    Ok(RetrievalResponse {
        items,
        stats: RetrievalStats {
            skipped_triggers: lookup.skipped,
            indices_selected: flat.len(),
            candidates_scanned: scanned,
        },
    })
}
