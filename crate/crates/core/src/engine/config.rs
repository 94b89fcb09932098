use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DwellThresholds;
use crate::ebr::{AnnConfig, LabelWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::ranking::HeadConfig;
use crate::text::HashedTrigramEmbedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub name: String,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            name: HashedTrigramEmbedder::NAME.into(),
            dim: 64,
            seed: 0x7e57_5eed,
        }
    }
}

/// Engine settings, loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Holds the corpus log, member file, indexes and model checkpoints.
    pub data_dir: PathBuf,
    pub k_tbr: usize,
    pub k_ebr: usize,
    pub keep_l1: usize,
    pub page_size: usize,
    /// Hard cap on ANN similarity evaluations per query.
    pub scan_limit: usize,
    pub alpha: f64,
    pub latency_budget_ms: u64,
    /// Reference time (unix seconds) for post freshness.
    pub as_of: i64,
    pub seed: u64,
    pub listen: String,
    pub embedder: EmbedderConfig,
    pub dwell_thresholds: DwellThresholds,
    pub label_weights: LabelWeights,
    pub two_tower: TrainConfig,
    pub l1: HeadConfig,
    pub l2: HeadConfig,
    pub ann: AnnConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_dir: PathBuf::from("data"),
            k_tbr: 1000,
            k_ebr: 400,
            keep_l1: 200,
            page_size: 10,
            scan_limit: 400,
            alpha: 0.5,
            latency_budget_ms: 100,
            as_of: 1_735_689_600,
            seed: 7,
            listen: "127.0.0.1:8080".into(),
            embedder: EmbedderConfig::default(),
            dwell_thresholds: DwellThresholds::default(),
            label_weights: LabelWeights::default(),
            two_tower: TrainConfig::default(),
            l1: HeadConfig::l1(),
            l2: HeadConfig::l2(),
            ann: AnnConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Reads a config file. A relative `data_dir` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = EngineConfig::from_toml(&text)?;
        if config.data_dir.is_relative() {
            if let Some(parent) = path.parent() {
                config.data_dir = parent.join(&config.data_dir);
            }
        }
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: EngineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.page_size == 0 {
            return fail("page_size must be at least 1".into());
        }
        for (name, k) in [("k_tbr", self.k_tbr), ("k_ebr", self.k_ebr), ("keep_l1", self.keep_l1)] {
            if k < self.page_size {
                return fail(format!("{name} = {k} is below page_size = {}", self.page_size));
            }
        }
        if self.k_ebr > self.scan_limit {
            return fail(format!("k_ebr = {} exceeds scan_limit = {}", self.k_ebr, self.scan_limit));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha = {} is outside [0, 1]", self.alpha));
        }
        if self.embedder.dim == 0 {
            return fail("embedder.dim must be positive".into());
        }
        if self.ann.m < 2 || self.ann.ef_construction == 0 {
            return fail("ann.m must be at least 2 and ann.ef_construction positive".into());
        }
        self.label_weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        for sgd in [&self.two_tower.sgd, &self.l1.sgd, &self.l2.sgd] {
            sgd.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn posts_path(&self) -> PathBuf {
        self.data_dir.join("posts.jsonl")
    }

    pub fn members_path(&self) -> PathBuf {
        self.data_dir.join("members.jsonl")
    }

    pub fn tbr_path(&self) -> PathBuf {
        self.data_dir.join("tbr.bin")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.data_dir.join("embeddings.bin")
    }

    pub fn two_tower_path(&self) -> PathBuf {
        self.data_dir.join("two_tower.bin")
    }

    pub fn l1_path(&self) -> PathBuf {
        self.data_dir.join("ranking_l1.bin")
    }

    pub fn l2_path(&self) -> PathBuf {
        self.data_dir.join("ranking_l2.bin")
    }
}
