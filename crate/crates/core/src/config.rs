use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::rebalance::SizeBounds;
use crate::serving::SelectionConfig;
use crate::trainer::{CodebookConfig, TrainingConfig};

/// Snapshot publishing cadence in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotCadence {
    pub full_every: u64,
    pub delta_every: u64,
}

impl Default for SnapshotCadence {
    fn default() -> Self {
        Self {
            full_every: 500,
            delta_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Retrieval cut for recall.
    pub recall_k: usize,
    /// Cap on evaluated triggers per task; `0` evaluates all.
    pub max_triggers: usize,
    /// Item pairs sampled for each of intra- and inter-index relevance.
    pub relevance_samples: usize,
    /// Wall-clock budget per throughput path, in milliseconds.
    pub bench_millis: u64,
    /// Triggers per benchmark request.
    pub bench_triggers: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_k: 100,
            max_triggers: 3000,
            relevance_samples: 20_000,
            bench_millis: 2000,
            bench_triggers: 10,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub corpus: CorpusConfig,
    pub training: TrainingConfig,
    pub codebook: CodebookConfig,
    pub bounds: SizeBounds,
    pub selection: SelectionConfig,
    pub snapshot_cadence: SnapshotCadence,
    pub eval: EvalConfig,
}

impl Config {
    /// Small end-to-end configuration for quick runs.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.corpus.num_items = 1000;
        c.corpus.num_events = 2000;
        c.corpus.num_t1_topics = 4;
        c.corpus.num_t2_per_t1 = 4;
        c.corpus.fresh_item_rate = 0.4;
        c.training.epochs = 2;
        c.training.batch_size = 64;
        c.training.num_negatives = 32;
        c.codebook.layer_sizes = vec![8, 4];
        c.codebook.init_sample_size = 512;
        c.codebook.warmup_steps = 5;
        c.codebook.layer_activation = vec![5, 10];
        c.selection.k = 20;
        c.eval.max_triggers = 200;
        c.eval.relevance_samples = 2000;
        c.eval.bench_millis = 200;
        c
    }

    /// Overrides every seed-bearing section with values derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.training.seed = seed.wrapping_add(1);
        self.eval.seed = seed.wrapping_add(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.bounds.validate()?;
        self.codebook.schedule()?;
        self.selection.validate(self.corpus.num_facets)?;
        if self.training.layer_weights.len() != self.codebook.layer_sizes.len() {
            return Err(Error::config("training.layer_weights needs one weight per codebook layer"));
        }
        if self.eval.recall_k == 0 {
            return Err(Error::config("eval.recall_k must be positive"));
        }
        if self.snapshot_cadence.full_every == 0 || self.snapshot_cadence.delta_every == 0 {
            return Err(Error::config("snapshot cadence must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [Config::default(), Config::smoke()] {
            c.validate().unwrap();
            let back: Config = serde_json::from_str(&c.to_json()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: Config = serde_json::from_str(r#"{"bounds": {"lower": 2, "upper": 9}}"#).unwrap();
        assert_eq!(c.bounds, SizeBounds { lower: 2, upper: 9 });
        assert_eq!(c.corpus, CorpusConfig::default());
    }

    #[test]
    fn inconsistent_sections_rejected() {
        let mut c = Config::default();
        c.training.layer_weights.push(1.0);
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.bounds.lower = 60;
        assert!(c.validate().is_err());
    }
}
