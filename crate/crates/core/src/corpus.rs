//! Synthetic item corpus with a two-level topic hierarchy and topic-biased
//! co-engagement events.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub item_id: u64,
    pub t1_topic: u32,
    /// Global fine-topic id; its parent coarse topic is `t2_topic / num_t2_per_t1`.
    pub t2_topic: u32,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub trigger_id: u64,
    pub candidate_id: u64,
    /// One co-engagement weight per facet.
    pub labels: Vec<f32>,
    pub timestamp: u64,
}

impl EngagementEvent {
    pub fn shares_topic(&self) -> bool {
        self.labels.get(1).is_some_and(|&w| w > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub num_items: usize,
    pub num_t1_topics: usize,
    pub num_t2_per_t1: usize,
    pub num_events: usize,
    /// Probability that a sampled pair is drawn from the same fine topic.
    pub topic_affinity: f64,
    /// Items per tick created after `boundary_tick`.
    pub fresh_item_rate: f64,
    /// Events are spread uniformly over `[0, horizon_ticks)`.
    pub horizon_ticks: u64,
    /// Train/eval split point; fresh items appear from here on.
    pub boundary_tick: u64,
    pub num_facets: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_items: 50_000,
            num_t1_topics: 8,
            num_t2_per_t1: 8,
            num_events: 500_000,
            topic_affinity: 0.7,
            fresh_item_rate: 5.0,
            horizon_ticks: 2_500,
            boundary_tick: 2_000,
            num_facets: 2,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn num_t2_topics(&self) -> usize {
        self.num_t1_topics * self.num_t2_per_t1
    }

    pub fn num_fresh_items(&self) -> usize {
        let window = self.horizon_ticks.saturating_sub(self.boundary_tick) as f64;
        (self.fresh_item_rate * window).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0
            || self.num_t1_topics == 0
            || self.num_t2_per_t1 == 0
            || self.num_events == 0
            || self.num_facets == 0
            || self.horizon_ticks == 0
        {
            return Err(Error::config("corpus counts must all be positive"));
        }
        if !(0.0..=1.0).contains(&self.topic_affinity) {
            return Err(Error::config("topic_affinity must lie in [0, 1]"));
        }
        if !(self.fresh_item_rate >= 0.0) {
            return Err(Error::config("fresh_item_rate must be non-negative"));
        }
        if self.boundary_tick > self.horizon_ticks {
            return Err(Error::config("boundary_tick must not exceed horizon_ticks"));
        }
        if self.num_fresh_items() >= self.num_items {
            return Err(Error::config("fresh items would exhaust num_items"));
        }
        Ok(())
    }
}

const ITEM_ID_BASE: u64 = 100_000;

/// Generates `num_items` items. Fine topics are drawn uniformly over the
/// hierarchy; the last `num_fresh_items()` items are created after the
/// boundary, in ascending `created_at` order.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<Item>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let num_t2 = config.num_t2_topics() as u32;
    let fresh = config.num_fresh_items();
    let base = config.num_items - fresh;

    let mut fresh_ticks: Vec<u64> = (0..fresh)
        .map(|_| rng.random_range(config.boundary_tick..config.horizon_ticks.max(config.boundary_tick + 1)))
        .collect();
    fresh_ticks.sort_unstable();

    let items = (0..config.num_items)
        .map(|i| {
            let t2 = rng.random_range(0..num_t2);
            Item {
                item_id: ITEM_ID_BASE + i as u64,
                t1_topic: t2 / config.num_t2_per_t1 as u32,
                t2_topic: t2,
                created_at: if i < base { 0 } else { fresh_ticks[i - base] },
            }
        })
        .collect();
    Ok(items)
}

/// Generates co-engagement events over the corpus. Items are assumed to be in
/// creation order (as produced by [`generate_corpus`]); a pair only involves
/// items that exist at the event's tick.
pub fn generate_events(corpus: &[Item], config: &CorpusConfig) -> Result<Vec<EngagementEvent>> {
    if corpus.is_empty() {
        return Err(Error::config("cannot generate events for an empty corpus"));
    }
    if corpus.len() < 2 {
        return Err(Error::config("co-engagement pairs need at least two items"));
    }
    if corpus.windows(2).any(|w| w[0].created_at > w[1].created_at) {
        return Err(Error::config("corpus must be ordered by created_at"));
    }
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let num_t2 = corpus.iter().map(|it| it.t2_topic as usize + 1).max().unwrap_or(1);
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); num_t2];
    for (idx, item) in corpus.iter().enumerate() {
        by_topic[item.t2_topic as usize].push(idx);
    }

    let mut ticks: Vec<u64> = (0..config.num_events)
        .map(|_| rng.random_range(0..config.horizon_ticks))
        .collect();
    ticks.sort_unstable();

    let existing_at = |t: u64| corpus.partition_point(|it| it.created_at <= t);

    let mut events = Vec::with_capacity(config.num_events);
    for t in ticks {
        let live = existing_at(t).max(2);
        let i = rng.random_range(0..live);
        let trigger = corpus[i];
        let topic = &by_topic[trigger.t2_topic as usize];
        let topic_live = topic.partition_point(|&idx| idx < live);

        let j = if topic_live >= 2 && rng.random_bool(config.topic_affinity) {
            loop {
                let j = topic[rng.random_range(0..topic_live)];
                if j != i {
                    break j;
                }
            }
        } else {
            loop {
                let j = rng.random_range(0..live);
                if j != i {
                    break j;
                }
            }
        };
        let candidate = corpus[j];
        events.push(EngagementEvent {
            trigger_id: trigger.item_id,
            candidate_id: candidate.item_id,
            labels: facet_labels(config.num_facets, trigger.t2_topic == candidate.t2_topic),
            timestamp: t,
        });
    }
    Ok(events)
}

/// Facet 1 always carries the aggregate engagement label, facet 2 carries the
/// topic-relevance label; further facets reuse the aggregate label.
pub fn facet_labels(num_facets: usize, same_topic: bool) -> Vec<f32> {
    (0..num_facets)
        .map(|f| if f == 1 && !same_topic { 0.0 } else { 1.0 })
        .collect()
}

/// Splits events at `boundary_tick`: train gets `timestamp < boundary`.
pub fn split_train_eval(
    events: &[EngagementEvent],
    boundary_tick: u64,
) -> (Vec<EngagementEvent>, Vec<EngagementEvent>) {
    events
        .iter()
        .cloned()
        .partition(|e| e.timestamp < boundary_tick)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub const ITEMS_FILE: &str = "items.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";

pub fn write_corpus_dir(dir: &Path, items: &[Item], events: &[EngagementEvent]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(ITEMS_FILE), items)?;
    write_jsonl(&dir.join(EVENTS_FILE), events)
}

pub fn read_corpus_dir(dir: &Path) -> Result<(Vec<Item>, Vec<EngagementEvent>)> {
    Ok((
        read_jsonl(&dir.join(ITEMS_FILE))?,
        read_jsonl(&dir.join(EVENTS_FILE))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(num_items: usize, t1: usize, t2: usize) -> CorpusConfig {
        CorpusConfig {
            num_items,
            num_t1_topics: t1,
            num_t2_per_t1: t2,
            num_events: 1000,
            fresh_item_rate: 0.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn single_item_corpus() {
        let items = generate_corpus(&small(1, 1, 1)).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!((items[0].t1_topic, items[0].t2_topic), (0, 0));
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(matches!(generate_corpus(&small(0, 1, 1)), Err(Error::Config(_))));
        assert!(matches!(generate_corpus(&small(10, 0, 1)), Err(Error::Config(_))));
        let mut cfg = small(10, 1, 1);
        cfg.topic_affinity = 1.5;
        assert!(generate_corpus(&cfg).is_err());
        assert!(matches!(generate_events(&[], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = small(500, 4, 4);
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        let ea = generate_events(&a, &cfg).unwrap();
        let eb = generate_events(&b, &cfg).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(serde_json::to_vec(&ea).unwrap(), serde_json::to_vec(&eb).unwrap());
    }

    #[test]
    fn topic_counts_are_multinomial() {
        // 10k items over 64 fine topics: each count ~ Binomial(10000, 1/64).
        let items = generate_corpus(&small(10_000, 8, 8)).unwrap();
        let mut counts = [0usize; 64];
        for it in &items {
            assert_eq!(it.t1_topic, it.t2_topic / 8);
            counts[it.t2_topic as usize] += 1;
        }
        let mean = 10_000.0 / 64.0;
        let sigma = (10_000.0 * (1.0 / 64.0) * (63.0 / 64.0f64)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma + 1.0, "count {c}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // 63 dof: mean 63, sd ~11.2; 5-sigma bound.
        assert!(chi2 < 63.0 + 5.0 * 11.23, "chi2 {chi2}");
    }

    #[test]
    fn full_affinity_always_shares_topic() {
        let mut cfg = small(2_000, 4, 4);
        cfg.topic_affinity = 1.0;
        let items = generate_corpus(&cfg).unwrap();
        let topic: std::collections::HashMap<u64, u32> =
            items.iter().map(|it| (it.item_id, it.t2_topic)).collect();
        for e in generate_events(&items, &cfg).unwrap() {
            assert_ne!(e.trigger_id, e.candidate_id);
            assert_eq!(topic[&e.trigger_id], topic[&e.candidate_id]);
            assert_eq!(e.labels, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn zero_affinity_share_rate_matches_binomial() {
        let mut cfg = small(10_000, 8, 8);
        cfg.topic_affinity = 0.0;
        cfg.num_events = 100_000;
        let items = generate_corpus(&cfg).unwrap();
        let events = generate_events(&items, &cfg).unwrap();
        let topic: std::collections::HashMap<u64, u32> =
            items.iter().map(|it| (it.item_id, it.t2_topic)).collect();
        let shared = events
            .iter()
            .filter(|e| topic[&e.trigger_id] == topic[&e.candidate_id])
            .count();
        let p = 1.0 / 64.0;
        let rate = shared as f64 / events.len() as f64;
        let sigma = (p * (1.0 - p) / events.len() as f64).sqrt();
        assert!((rate - p).abs() <= 3.0 * sigma, "rate {rate}");
        for e in &events {
            let same = topic[&e.trigger_id] == topic[&e.candidate_id];
            assert_eq!(e.labels, if same { vec![1.0, 1.0] } else { vec![1.0, 0.0] });
        }
    }

    #[test]
    fn affinity_calibration() {
        let mut cfg = small(5_000, 4, 4);
        cfg.topic_affinity = 0.5;
        cfg.num_events = 50_000;
        let items = generate_corpus(&cfg).unwrap();
        let events = generate_events(&items, &cfg).unwrap();
        let rate = events.iter().filter(|e| e.shares_topic()).count() as f64 / events.len() as f64;
        let p = 0.5 + 0.5 / 16.0;
        let sigma = (p * (1.0 - p) / events.len() as f64).sqrt();
        assert!((rate - p).abs() <= 4.0 * sigma, "rate {rate}");
    }

    #[test]
    fn fresh_items_only_engage_after_creation() {
        let cfg = CorpusConfig {
            num_items: 2_000,
            num_events: 20_000,
            fresh_item_rate: 1.0,
            horizon_ticks: 1_000,
            boundary_tick: 800,
            ..CorpusConfig::default()
        };
        let items = generate_corpus(&cfg).unwrap();
        assert_eq!(items.iter().filter(|it| it.created_at >= 800).count(), 200);
        let created: std::collections::HashMap<u64, u64> =
            items.iter().map(|it| (it.item_id, it.created_at)).collect();
        for e in generate_events(&items, &cfg).unwrap() {
            assert!(created[&e.trigger_id] <= e.timestamp);
            assert!(created[&e.candidate_id] <= e.timestamp);
        }
    }

    #[test]
    fn split_boundaries() {
        let ev = |t| EngagementEvent {
            trigger_id: 1,
            candidate_id: 2,
            labels: vec![1.0],
            timestamp: t,
        };
        let events = vec![ev(1), ev(5), ev(9)];
        let (train, eval) = split_train_eval(&events, 5);
        assert_eq!(train.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![1]);
        assert_eq!(eval.iter().map(|e| e.timestamp).collect::<Vec<_>>(), vec![5, 9]);

        let (train, eval) = split_train_eval(&events, 0);
        assert!(train.is_empty());
        assert_eq!(eval.len(), 3);
        let (train, eval) = split_train_eval(&events, 100);
        assert_eq!(train.len(), 3);
        assert!(eval.is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = std::env::temp_dir().join(format!("mfli-corpus-{}", std::process::id()));
        let cfg = small(50, 2, 2);
        let items = generate_corpus(&cfg).unwrap();
        let events = generate_events(&items, &cfg).unwrap();
        write_corpus_dir(&dir, &items, &events).unwrap();
        let (items2, events2) = read_corpus_dir(&dir).unwrap();
        assert_eq!(items, items2);
        assert_eq!(events, events2);
        let first = std::fs::read_to_string(dir.join(ITEMS_FILE)).unwrap();
        assert!(first.lines().next().unwrap().contains("\"t2_topic\""));
        std::fs::remove_dir_all(dir).ok();
    }
}
