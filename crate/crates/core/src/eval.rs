//! Metrics, the brute-force retrieval oracle, throughput measurement and the
//! end-to-end pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::corpus::{generate_corpus, generate_events, split_train_eval, EngagementEvent, Item};
use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::math::dot;
use crate::serving::{retrieve, trigger_queries, RetrievalRequest, SelectionConfig};
use crate::snapshot::{
    publish_delta_snapshot, publish_full_snapshot, DeltaSnapshot, FullOptions, FullSnapshot, PublishSource,
    SnapshotPair,
};
use crate::trainer::{Checkpoint, TrainSummary, Trainer};

fn better(a: &(u64, f64), b: &(u64, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn keep_top(mut v: Vec<(u64, f64)>, k: usize) -> Vec<(u64, f64)> {
    if v.len() > k {
        v.select_nth_unstable_by(k, better);
        v.truncate(k);
    }
    v.sort_by(better);
    v
}

/// Exact top-`k` items of `ids` by `score(row)`, descending, ties by id.
fn scan_topk(ids: &[u64], k: usize, exec: Exec, score: impl Fn(usize) -> f64 + Sync) -> Vec<(u64, f64)> {
    const CHUNK: usize = 16_384;
    let chunks = ids.len().div_ceil(CHUNK);
    let partial = exec.map_range(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(ids.len());
        keep_top((lo..hi).map(|r| (ids[r], score(r))).collect(), k)
    });
    keep_top(partial.into_iter().flatten().collect(), k)
}

/// Exact single-facet retrieval over every row of `store`.
pub fn brute_force_topk(query: &[f32], store: &EmbeddingStore, k: usize, facet: usize, exec: Exec) -> Result<Vec<(u64, f64)>> {
    if k == 0 {
        return Err(Error::arg("k must be positive"));
    }
    if facet >= store.facets() || query.len() != store.dim() {
        return Err(Error::arg("query shape does not match store"));
    }
    Ok(scan_topk(&store.item_ids, k, exec, |r| dot(query, store.table.facet(r, facet)) as f64))
}

/// Exact retrieval with the serving scorer: an item's score is its best
/// facet score against the per-facet queries.
pub fn brute_force_multi(queries: &[Vec<f32>], store: &EmbeddingStore, k: usize, exec: Exec) -> Result<Vec<(u64, f64)>> {
    if k == 0 {
        return Err(Error::arg("k must be positive"));
    }
    if queries.len() != store.facets() {
        return Err(Error::arg("need one query per facet"));
    }
    Ok(scan_topk(&store.item_ids, k, exec, |r| {
        queries
            .iter()
            .enumerate()
            .map(|(f, q)| dot(q, store.table.facet(r, f)) as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// `|retrieved ∩ truth| / |truth|`; `None` for empty truth.
pub fn recall_at_k(retrieved: &[u64], truth: &HashSet<u64>) -> Option<f64> {
    if truth.is_empty() {
        return None;
    }
    let hits = retrieved.iter().collect::<HashSet<_>>().into_iter().filter(|id| truth.contains(id)).count();
    Some(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicLevel {
    T1,
    T2,
}

/// Item id → (t1, t2).
pub type TopicMap = HashMap<u64, (u32, u32)>;

pub fn topic_map(items: &[Item]) -> TopicMap {
    items.iter().map(|it| (it.item_id, (it.t1_topic, it.t2_topic))).collect()
}

/// Fraction of pairs sharing a topic at `level`, plus the number of pairs
/// skipped for unknown items.
pub fn topic_match_rate(pairs: &[(u64, u64)], topics: &TopicMap, level: TopicLevel) -> (f64, usize) {
    let mut hits = 0usize;
    let mut seen = 0usize;
    for (a, b) in pairs {
        let (Some(ta), Some(tb)) = (topics.get(a), topics.get(b)) else {
            continue;
        };
        seen += 1;
        hits += match level {
            TopicLevel::T1 => ta.0 == tb.0,
            TopicLevel::T2 => ta.1 == tb.1,
        } as usize;
    }
    let rate = if seen == 0 { 0.0 } else { hits as f64 / seen as f64 };
    (rate, pairs.len() - seen)
}

/// Items of every valid non-empty index, for each facet.
pub fn index_groups(snap: &FullSnapshot) -> Vec<Vec<Vec<u64>>> {
    (0..snap.facets())
        .map(|f| {
            (0..snap.assignments.counts[f])
                .map(|local| snap.items(snap.assignments.offsets[f] + local).unwrap().to_vec())
                .filter(|g| !g.is_empty())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub intra: f64,
    pub inter: f64,
    pub samples: usize,
}

impl Relevance {
    pub fn gap(&self) -> f64 {
        self.intra - self.inter
    }

    /// Standard error of the gap under independent Bernoulli samples.
    pub fn gap_sigma(&self) -> f64 {
        let n = self.samples.max(1) as f64;
        (self.intra * (1.0 - self.intra) / n + self.inter * (1.0 - self.inter) / n).sqrt()
    }
}

/// T2 match rate of random same-index pairs versus random cross-index pairs,
/// with facets sampled uniformly.
pub fn index_relevance<R: Rng>(groups: &[Vec<Vec<u64>>], topics: &TopicMap, samples: usize, rng: &mut R) -> Relevance {
    let t2 = |id: &u64| topics.get(id).map(|t| t.1);
    let mut intra = (0usize, 0usize);
    let mut inter = (0usize, 0usize);
    let usable: Vec<&Vec<Vec<u64>>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if usable.is_empty() {
        return Relevance { intra: 0.0, inter: 0.0, samples: 0 };
    }
    let multi: Vec<Vec<usize>> = usable
        .iter()
        .map(|g| (0..g.len()).filter(|&i| g[i].len() >= 2).collect())
        .collect();
    for _ in 0..samples {
        let f = rng.random_range(0..usable.len());
        let g = usable[f];
        if !multi[f].is_empty() {
            let idx = &g[multi[f][rng.random_range(0..multi[f].len())]];
            let a = rng.random_range(0..idx.len());
            let mut b = rng.random_range(0..idx.len() - 1);
            if b >= a {
                b += 1;
            }
            if let (Some(x), Some(y)) = (t2(&idx[a]), t2(&idx[b])) {
                intra.0 += (x == y) as usize;
                intra.1 += 1;
            }
        }
        if g.len() >= 2 {
            let i = rng.random_range(0..g.len());
            let mut j = rng.random_range(0..g.len() - 1);
            if j >= i {
                j += 1;
            }
            let a = g[i][rng.random_range(0..g[i].len())];
            let b = g[j][rng.random_range(0..g[j].len())];
            if let (Some(x), Some(y)) = (t2(&a), t2(&b)) {
                inter.0 += (x == y) as usize;
                inter.1 += 1;
            }
        }
    }
    let rate = |(h, n): (usize, usize)| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Relevance {
        intra: rate(intra),
        inter: rate(inter),
        samples: intra.1.min(inter.1),
    }
}

/// Same group sizes with items shuffled across groups.
pub fn null_groups<R: Rng>(groups: &[Vec<Vec<u64>>], rng: &mut R) -> Vec<Vec<Vec<u64>>> {
    groups
        .iter()
        .map(|g| {
            let mut all: Vec<u64> = g.iter().flatten().copied().collect();
            all.shuffle(rng);
            let mut out = Vec::with_capacity(g.len());
            let mut at = 0;
            for grp in g {
                out.push(all[at..at + grp.len()].to_vec());
                at += grp.len();
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    /// Inclusive lower edge.
    pub lo: usize,
    /// Exclusive upper edge.
    pub hi: usize,
    pub indices: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub buckets: Vec<SizeBucket>,
    /// Non-empty valid indices over all valid indices.
    pub usage_ratio: f64,
    /// Per facet, fraction of original codeword paths holding at least one item.
    pub original_usage: Vec<f64>,
    pub invalid_items: usize,
    pub pooled_items: usize,
}

/// Power-of-two size buckets over valid indices.
pub fn index_stats(snap: &FullSnapshot) -> IndexStats {
    let a = &snap.assignments;
    let mut buckets: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut valid = 0usize;
    let mut non_empty = 0usize;
    let mut invalid_items = 0usize;
    let mut original_usage = Vec::with_capacity(a.facets);
    let paths: usize = snap.layer_sizes.iter().product();
    for f in 0..a.facets {
        let mut used = BTreeSet::new();
        for local in 0..a.counts[f] {
            let n = snap.index_map.counts[(a.offsets[f] + local) as usize] as usize;
            valid += 1;
            if n > 0 {
                non_empty += 1;
                used.extend(snap.remaps[f].fine_to_original[local as usize].iter().copied());
            }
            let b = if n == 0 { 0 } else { usize::BITS - n.leading_zeros() };
            let e = buckets.entry(b).or_default();
            e.0 += 1;
            e.1 += n;
        }
        invalid_items += snap.index_map.counts[a.invalid_index(f) as usize] as usize;
        original_usage.push(if paths == 0 { 0.0 } else { used.len() as f64 / paths as f64 });
    }
    IndexStats {
        buckets: buckets
            .into_iter()
            .map(|(b, (indices, items))| {
                let (lo, hi) = if b == 0 { (0, 1) } else { (1 << (b - 1), 1 << b) };
                SizeBucket { lo, hi, indices, items }
            })
            .collect(),
        usage_ratio: if valid == 0 { 0.0 } else { non_empty as f64 / valid as f64 },
        original_usage,
        invalid_items,
        pooled_items: snap.num_items(),
    }
}

/// Deterministic stream of trigger lists drawn from `pool`.
pub fn request_stream(pool: &[u64], requests: usize, triggers: usize, seed: u64) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..requests)
        .map(|_| (0..triggers).map(|_| pool[rng.random_range(0..pool.len())]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub mfli_qps: f64,
    pub brute_force_qps: f64,
    pub ratio: f64,
    pub mfli_requests: usize,
    pub brute_force_requests: usize,
}

/// Runs the request stream (cycled) through each path for `duration` and
/// reports queries per second.
pub fn throughput_bench(
    pair: &SnapshotPair,
    store: &EmbeddingStore,
    selection: &SelectionConfig,
    stream: &[Vec<u64>],
    k: usize,
    duration: Duration,
    exec: Exec,
) -> Result<Throughput> {
    if duration.is_zero() {
        return Err(Error::arg("benchmark duration must be positive"));
    }
    if stream.is_empty() {
        return Err(Error::arg("empty request stream"));
    }
    let run = |f: &dyn Fn(&[u64]) -> Result<()>| -> Result<(usize, f64)> {
        let start = Instant::now();
        let mut n = 0;
        while start.elapsed() < duration {
            f(&stream[n % stream.len()])?;
            n += 1;
        }
        Ok((n, n as f64 / start.elapsed().as_secs_f64()))
    };
    let (mfli_requests, mfli_qps) = run(&|t| {
        let req = RetrievalRequest { triggers: t.to_vec(), seed: 0 };
        match retrieve(&req, selection, pair, store, exec) {
            Ok(_) | Err(Error::EmptyTriggers { .. }) => Ok(()),
            Err(e) => Err(e),
        }
    })?;
    let (brute_force_requests, brute_force_qps) = run(&|t| {
        brute_force_multi(&trigger_queries(t, store), store, k, exec).map(|_| ())
    })?;
    Ok(Throughput {
        mfli_qps,
        brute_force_qps,
        ratio: mfli_qps / brute_force_qps,
        mfli_requests,
        brute_force_requests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub recall_at_k: usize,
    pub engagement_recall: f64,
    pub engagement_brute_force_recall: f64,
    pub engagement_triggers: usize,
    pub cold_recall: f64,
    pub cold_brute_force_recall: f64,
    pub cold_triggers: usize,
    /// Expected recall of `k` uniformly random pool items.
    pub random_recall: f64,
    pub t1_match_rate: f64,
    pub t2_match_rate: f64,
    pub intra_index_relevance: f64,
    pub inter_index_relevance: f64,
    pub null_intra_relevance: f64,
    pub null_inter_relevance: f64,
    pub relevance_gap_sigma: f64,
    pub null_gap_sigma: f64,
    pub index_size_histogram: Vec<SizeBucket>,
    pub index_usage_ratio: f64,
    pub original_index_usage: Vec<f64>,
    pub throughput: Option<Throughput>,
    pub train: TrainSummary,
    pub pool_size: usize,
    pub fresh_items: usize,
    pub config: Config,
}

/// Everything built by the pipeline before evaluation.
pub struct World {
    pub config: Config,
    pub items: Vec<Item>,
    pub train_events: Vec<EngagementEvent>,
    pub eval_events: Vec<EngagementEvent>,
    pub checkpoint: Checkpoint,
    pub store: EmbeddingStore,
    pub pair: SnapshotPair,
    pub pool: Vec<u64>,
    pub fresh: Vec<u64>,
    pub train: TrainSummary,
}

/// Generates the corpus, trains, and publishes a full and a delta snapshot.
pub fn build_world(config: &Config, exec: Exec) -> Result<World> {
    config.validate()?;
    let c = &config.corpus;
    let items = generate_corpus(c).map_err(|e| e.in_stage("gen"))?;
    let events = generate_events(&items, c).map_err(|e| e.in_stage("gen"))?;
    let (train_events, eval_events) = split_train_eval(&events, c.boundary_tick);
    let pooled: Vec<Item> = items.iter().filter(|it| it.created_at < c.boundary_tick).cloned().collect();
    let pool: Vec<u64> = pooled.iter().map(|it| it.item_id).collect();
    let fresh: Vec<u64> = items
        .iter()
        .filter(|it| it.created_at >= c.boundary_tick)
        .map(|it| it.item_id)
        .collect();

    let mut trainer = Trainer::new(
        config.training.clone(),
        config.codebook.clone(),
        &pooled,
        c.num_facets,
        c.boundary_tick,
    )
    .map_err(|e| e.in_stage("train"))?;
    let train = trainer.fit(&train_events, exec).map_err(|e| e.in_stage("train"))?;
    let checkpoint = trainer.checkpoint();
    let store = checkpoint.embedding_store()?;
    let src = PublishSource {
        embeddings: &store,
        codebook: &checkpoint.codebook,
        codebook_version: checkpoint.step,
    };
    let opts = FullOptions {
        bounds: config.bounds,
        seed: config.training.seed,
        exec,
        config_echo: config.to_json(),
    };
    let (full, _) =
        publish_full_snapshot(src, &pool, c.boundary_tick, &opts, |_, _| false).map_err(|e| e.in_stage("publish-full"))?;
    let delta = publish_delta_snapshot(src, &full, &fresh, c.horizon_ticks, exec).map_err(|e| e.in_stage("publish-delta"))?;
    let pair = SnapshotPair::new(Arc::new(full), Some(Arc::new(delta)))?;
    Ok(World {
        config: config.clone(),
        items,
        train_events,
        eval_events,
        checkpoint,
        store,
        pair,
        pool,
        fresh,
        train,
    })
}

/// Trigger → ground-truth candidates from held-out events.
pub fn ground_truth(events: &[EngagementEvent], triggers: &HashSet<u64>, keep: impl Fn(u64) -> bool) -> BTreeMap<u64, HashSet<u64>> {
    let mut gt: BTreeMap<u64, HashSet<u64>> = BTreeMap::new();
    for e in events {
        if triggers.contains(&e.trigger_id) && e.candidate_id != e.trigger_id && keep(e.candidate_id) {
            gt.entry(e.trigger_id).or_default().insert(e.candidate_id);
        }
    }
    gt
}

/// Top-`k` item ids for a single trigger through the serving path, trigger excluded.
pub fn mfli_topk(world: &World, selection: &SelectionConfig, trigger: u64, k: usize, seed: u64, exec: Exec) -> Result<Vec<u64>> {
    let req = RetrievalRequest { triggers: vec![trigger], seed };
    let mut items = retrieve(&req, selection, &world.pair, &world.store, exec)?.items;
    items.retain(|r| r.id != trigger);
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    Ok(items.into_iter().take(k).map(|r| r.id).collect())
}

/// Exact top-`k` over pool and fresh items, trigger excluded.
pub fn brute_topk(world: &World, candidates: &EmbeddingStore, trigger: u64, k: usize, exec: Exec) -> Result<Vec<u64>> {
    let q = trigger_queries(&[trigger], &world.store);
    Ok(brute_force_multi(&q, candidates, k + 1, exec)?
        .into_iter()
        .map(|(id, _)| id)
        .filter(|&id| id != trigger)
        .take(k)
        .collect())
}

/// Embeddings of pool plus fresh items, as seen by the serving path.
pub fn candidate_store(world: &World) -> Result<EmbeddingStore> {
    let ids: Vec<u64> = world.pool.iter().chain(&world.fresh).copied().collect();
    let mut table = crate::embedding::ItemEmbeddingTable::zeros(ids.len(), world.store.facets(), world.store.dim());
    for (r, &id) in ids.iter().enumerate() {
        table.row_mut(r).copy_from_slice(&world.store.embedding(id));
    }
    EmbeddingStore::new(ids, table, world.store.cold_start_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub mfli: f64,
    pub brute_force: f64,
    pub triggers: usize,
    /// (trigger, retrieved) pairs from the serving path.
    #[serde(skip)]
    pub pairs: Vec<(u64, u64)>,
}

/// Mean per-trigger recall of MFLI and brute force against `truth`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_recall(
    world: &World,
    candidates: &EmbeddingStore,
    selection: &SelectionConfig,
    truth: &BTreeMap<u64, HashSet<u64>>,
    k: usize,
    max_triggers: usize,
    seed: u64,
    exec: Exec,
) -> Result<RecallResult> {
    let mut triggers: Vec<u64> = truth.keys().copied().collect();
    if max_triggers > 0 && triggers.len() > max_triggers {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        triggers.shuffle(&mut rng);
        triggers.truncate(max_triggers);
        triggers.sort_unstable();
    }
    let per: Vec<Result<(f64, f64, Vec<u64>)>> = exec.map(&triggers, |&t| {
        let gt = &truth[&t];
        let m = mfli_topk(world, selection, t, k, seed ^ t, Exec::Sequential)?;
        let b = brute_topk(world, candidates, t, k, Exec::Sequential)?;
        Ok((recall_at_k(&m, gt).unwrap_or(0.0), recall_at_k(&b, gt).unwrap_or(0.0), m))
    });
    let mut out = RecallResult {
        mfli: 0.0,
        brute_force: 0.0,
        triggers: triggers.len(),
        pairs: Vec::new(),
    };
    for (&t, r) in triggers.iter().zip(per) {
        let (m, b, ids) = r?;
        out.mfli += m;
        out.brute_force += b;
        out.pairs.extend(ids.into_iter().map(|id| (t, id)));
    }
    if !triggers.is_empty() {
        out.mfli /= triggers.len() as f64;
        out.brute_force /= triggers.len() as f64;
    }
    Ok(out)
}

/// Evaluates a built world.
pub fn evaluate(world: &World, exec: Exec) -> Result<EvalReport> {
    let cfg = &world.config;
    let e = &cfg.eval;
    let candidates = candidate_store(world)?;
    let pool_set: HashSet<u64> = world.pool.iter().copied().collect();
    let fresh_set: HashSet<u64> = world.fresh.iter().copied().collect();

    let truth = ground_truth(&world.eval_events, &pool_set, |_| true);
    let engagement = evaluate_recall(world, &candidates, &cfg.selection, &truth, e.recall_k, e.max_triggers, e.seed, exec)
        .map_err(|err| err.in_stage("eval"))?;
    let cold_truth = ground_truth(&world.eval_events, &pool_set, |c| fresh_set.contains(&c));
    let cold = evaluate_recall(world, &candidates, &cfg.selection, &cold_truth, e.recall_k, e.max_triggers, e.seed, exec)
        .map_err(|err| err.in_stage("eval"))?;

    let topics = topic_map(&world.items);
    let (t1, _) = topic_match_rate(&engagement.pairs, &topics, TopicLevel::T1);
    let (t2, _) = topic_match_rate(&engagement.pairs, &topics, TopicLevel::T2);
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
    let groups = index_groups(&world.pair.full);
    let rel = index_relevance(&groups, &topics, e.relevance_samples, &mut rng);
    let null = index_relevance(&null_groups(&groups, &mut rng), &topics, e.relevance_samples, &mut rng);
    let stats = index_stats(&world.pair.full);

    let throughput = if e.bench_millis > 0 {
        let stream = request_stream(&world.pool, 256, e.bench_triggers, e.seed);
        Some(
            throughput_bench(
                &world.pair,
                &candidates,
                &cfg.selection,
                &stream,
                e.recall_k,
                Duration::from_millis(e.bench_millis),
                exec,
            )
            .map_err(|err| err.in_stage("bench"))?,
        )
    } else {
        None
    };

    Ok(EvalReport {
        seed: cfg.corpus.seed,
        recall_at_k: e.recall_k,
        engagement_recall: engagement.mfli,
        engagement_brute_force_recall: engagement.brute_force,
        engagement_triggers: engagement.triggers,
        cold_recall: cold.mfli,
        cold_brute_force_recall: cold.brute_force,
        cold_triggers: cold.triggers,
        random_recall: (e.recall_k as f64 / candidates.item_ids.len().max(1) as f64).min(1.0),
        t1_match_rate: t1,
        t2_match_rate: t2,
        intra_index_relevance: rel.intra,
        inter_index_relevance: rel.inter,
        null_intra_relevance: null.intra,
        null_inter_relevance: null.inter,
        relevance_gap_sigma: rel.gap_sigma(),
        null_gap_sigma: null.gap_sigma(),
        index_size_histogram: stats.buckets,
        index_usage_ratio: stats.usage_ratio,
        original_index_usage: stats.original_usage,
        throughput,
        train: world.train.clone(),
        pool_size: world.pool.len(),
        fresh_items: world.fresh.len(),
        config: cfg.clone(),
    })
}

/// gen → train → publish → serve → eval. With `out_dir`, writes
/// `report.jsonl` plus one CSV per histogram.
pub fn run_pipeline(config: &Config, out_dir: Option<&Path>, exec: Exec) -> Result<EvalReport> {
    let world = build_world(config, exec)?;
    let report = evaluate(&world, exec)?;
    if let Some(dir) = out_dir {
        write_report(dir, &report).map_err(|e| e.in_stage("report"))?;
    }
    Ok(report)
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join("report.jsonl"))?;
    serde_json::to_writer(&mut f, report)?;
    f.write_all(b"\n")?;
    let mut csv = String::from("size_lo,size_hi,indices,items\n");
    for b in &report.index_size_histogram {
        csv.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.indices, b.items));
    }
    std::fs::write(dir.join("index_sizes.csv"), csv)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.train.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(dir.join("epoch_loss.csv"), csv)?;
    Ok(())
}

/// Loads snapshots written by the CLI.
pub fn load_pair(full: &Path, delta: Option<&Path>) -> Result<SnapshotPair> {
    let full = Arc::new(FullSnapshot::load(full)?);
    let delta = delta.map(DeltaSnapshot::load).transpose()?.map(Arc::new);
    SnapshotPair::new(full, delta)
}
