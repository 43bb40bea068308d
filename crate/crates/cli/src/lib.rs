//! Subcommands of the `mfli` binary. Every artifact lives in one output
//! directory:
//!
//! | file | written by |
//! |---|---|
//! | `items.jsonl`, `events.jsonl` | `gen` |
//! | `checkpoint.ckpt`, `train.json` | `train` |
//! | `full.snap`, `plan.jsonl` | `publish-full` |
//! | `delta.snap` | `publish-delta` |
//! | `report.jsonl`, `*.csv` | `eval` |

pub mod server;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mfli::corpus::{generate_corpus, generate_events, read_corpus_dir, split_train_eval, write_corpus_dir, Item};
use mfli::embedding::EmbeddingStore;
use mfli::eval::{index_stats, request_stream, run_pipeline, throughput_bench};
use mfli::serving::{retrieve, RetrievalRequest, RetrievalResponse};
use mfli::snapshot::{
    publish_delta_snapshot, publish_full_snapshot, DeltaSnapshot, FullOptions, FullSnapshot, PublishSource,
    SnapshotPair,
};
use mfli::trainer::{Checkpoint, Trainer};
use mfli::{Config, Exec};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const FULL_FILE: &str = "full.snap";
pub const DELTA_FILE: &str = "delta.snap";
pub const PLAN_FILE: &str = "plan.jsonl";

#[derive(Debug, Parser)]
#[command(name = "mfli", version, about = "Multifaceted learnable index: train, publish, serve, evaluate")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON config; missing sections take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "mfli-out")]
    pub out: PathBuf,
    /// Run data-parallel kernels on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

impl Global {
    pub fn load_config(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            c = c.with_seed(s);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and co-engagement events.
    Gen,
    /// Train embeddings and codebook on events before the boundary tick.
    Train,
    /// Quantize and rebalance the item pool into a full snapshot.
    PublishFull {
        /// Items created before this tick form the pool (default: the boundary tick).
        #[arg(long)]
        tick: Option<u64>,
    },
    /// Index items created after the full snapshot into a delta snapshot.
    PublishDelta {
        /// Items created before this tick are included (default: the horizon).
        #[arg(long)]
        tick: Option<u64>,
    },
    /// Serve retrieval over HTTP with hot snapshot reload.
    Serve {
        /// Directory holding checkpoint and snapshots (default: --out).
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Polling interval for snapshot changes.
        #[arg(long, default_value_t = 1000)]
        reload_ms: u64,
    },
    /// Run one retrieval request and print the response.
    Query {
        #[arg(long, value_delimiter = ',', required = true)]
        triggers: Vec<u64>,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        request_seed: u64,
        /// Print at most this many items.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the whole pipeline and write the evaluation report.
    Eval,
    /// Measure retrieval versus brute-force QPS on the published snapshots.
    Bench {
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        /// Wall-clock budget per path (default: eval.bench_millis).
        #[arg(long)]
        millis: Option<u64>,
    },
    /// Print index size statistics of the full snapshot.
    Stats {
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

/// Runs a subcommand; returns the JSON document it prints.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    let g = &cli.global;
    let config = g.load_config()?;
    let exec = g.exec();
    let out = &g.out;
    let dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.clone());
    match &cli.command {
        Command::Gen => {
            let items = generate_corpus(&config.corpus)?;
            let events = generate_events(&items, &config.corpus)?;
            write_corpus_dir(out, &items, &events)?;
            Ok(serde_json::json!({ "items": items.len(), "events": events.len(), "dir": out }))
        }
        Command::Train => {
            let (items, events) = read_corpus_dir(out).context("reading corpus; run `gen` first")?;
            let boundary = config.corpus.boundary_tick;
            let (train_events, _) = split_train_eval(&events, boundary);
            let pooled: Vec<Item> = items.iter().filter(|it| it.created_at < boundary).cloned().collect();
            let mut trainer = Trainer::new(
                config.training.clone(),
                config.codebook.clone(),
                &pooled,
                config.corpus.num_facets,
                boundary,
            )?;
            let summary = trainer.fit(&train_events, exec)?;
            trainer.checkpoint().save(&out.join(CHECKPOINT_FILE))?;
            let value = serde_json::to_value(&summary)?;
            std::fs::write(out.join("train.json"), serde_json::to_vec_pretty(&value)?)?;
            Ok(value)
        }
        Command::PublishFull { tick } => {
            let tick = tick.unwrap_or(config.corpus.boundary_tick);
            let (items, _) = read_corpus_dir(out)?;
            let ck = load_checkpoint(out)?;
            let store = ck.embedding_store()?;
            let pool: Vec<u64> = items.iter().filter(|it| it.created_at < tick).map(|it| it.item_id).collect();
            let src = PublishSource { embeddings: &store, codebook: &ck.codebook, codebook_version: ck.step };
            let opts = FullOptions {
                bounds: config.bounds,
                seed: config.training.seed,
                exec,
                config_echo: config.to_json(),
            };
            let (full, plan) = publish_full_snapshot(src, &pool, tick, &opts, |_, _| false)?;
            plan.write_plan(std::fs::File::create(out.join(PLAN_FILE))?)?;
            write_atomic(&out.join(FULL_FILE), &full.to_bytes())?;
            let stale = out.join(DELTA_FILE);
            if stale.exists() {
                std::fs::remove_file(stale)?;
            }
            Ok(serde_json::json!({
                "snapshot_id": full.snapshot_id,
                "items": full.num_items(),
                "indices": full.assignments.counts,
            }))
        }
        Command::PublishDelta { tick } => {
            let tick = tick.unwrap_or(config.corpus.horizon_ticks);
            let (items, _) = read_corpus_dir(out)?;
            let ck = load_checkpoint(out)?;
            let store = ck.embedding_store()?;
            let full = FullSnapshot::load(&out.join(FULL_FILE)).context("loading full snapshot; run `publish-full` first")?;
            let fresh: Vec<u64> = items
                .iter()
                .filter(|it| it.created_at >= full.created_at && it.created_at < tick)
                .map(|it| it.item_id)
                .collect();
            let src = PublishSource { embeddings: &store, codebook: &ck.codebook, codebook_version: ck.step };
            let delta = publish_delta_snapshot(src, &full, &fresh, tick, exec)?;
            write_atomic(&out.join(DELTA_FILE), &delta.to_bytes())?;
            Ok(serde_json::json!({ "snapshot_id": delta.snapshot_id, "full_id": delta.full_id, "items": delta.len() }))
        }
        Command::Serve { snapshot_dir, port, reload_ms } => {
            let dir = dir(snapshot_dir);
            let state = server::AppState::load(&dir, config.selection.clone(), exec)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(state, dir, *port, Duration::from_millis(*reload_ms)))?;
            Ok(serde_json::Value::Null)
        }
        Command::Query { triggers, snapshot_dir, request_seed, limit } => {
            let dir = dir(snapshot_dir);
            let (pair, store) = load_serving(&dir)?;
            let req = RetrievalRequest { triggers: triggers.clone(), seed: *request_seed };
            let mut resp: RetrievalResponse = retrieve(&req, &config.selection, &pair, &store, exec)?;
            resp.items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
            if let Some(l) = limit {
                resp.items.truncate(*l);
            }
            Ok(serde_json::to_value(resp)?)
        }
        Command::Eval => {
            let report = run_pipeline(&config, Some(out), exec)?;
            Ok(serde_json::to_value(report)?)
        }
        Command::Bench { snapshot_dir, millis } => {
            let dir = dir(snapshot_dir);
            let (pair, store) = load_serving(&dir)?;
            let millis = millis.unwrap_or(config.eval.bench_millis);
            if millis == 0 {
                bail!("benchmark duration must be positive");
            }
            let pool = pair.full.assignments.item_ids.clone();
            if pool.is_empty() {
                bail!("full snapshot has no items");
            }
            let stream = request_stream(&pool, 256, config.eval.bench_triggers, config.eval.seed);
            let t = throughput_bench(
                &pair,
                &store,
                &config.selection,
                &stream,
                config.eval.recall_k,
                Duration::from_millis(millis),
                exec,
            )?;
            Ok(serde_json::to_value(t)?)
        }
        Command::Stats { snapshot_dir } => {
            let full = FullSnapshot::load(&dir(snapshot_dir).join(FULL_FILE))?;
            Ok(serde_json::to_value(index_stats(&full))?)
        }
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(&dir.join(CHECKPOINT_FILE)).with_context(|| format!("loading checkpoint from {}; run `train` first", dir.display()))
}

/// Full snapshot, optional delta and the embedding store from `dir`.
pub fn load_serving(dir: &Path) -> Result<(SnapshotPair, EmbeddingStore)> {
    let store = load_checkpoint(dir)?.embedding_store()?;
    Ok((load_pair(dir)?, store))
}

pub fn load_pair(dir: &Path) -> Result<SnapshotPair> {
    let full = FullSnapshot::load(&dir.join(FULL_FILE)).with_context(|| format!("loading {}", dir.join(FULL_FILE).display()))?;
    let delta_path = dir.join(DELTA_FILE);
    let delta = if delta_path.exists() {
        let d = DeltaSnapshot::load(&delta_path)?;
        // A delta left over from an older full snapshot is ignored.
        (d.full_id == full.snapshot_id).then_some(d)
    } else {
        None
    };
    Ok(SnapshotPair::new(full.into(), delta.map(Into::into))?)
}

/// Writes through a temporary file and renames, so readers never see a
/// partially written snapshot.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
