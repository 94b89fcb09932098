use std::path::Path;

use rand::Rng;

use super::features::{PostSideFeatures, QuerySideFeatures, POST_EXTRA_FEATURES, QUERY_EXTRA_FEATURES};
use crate::checkpoint::{self, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, MlpParams};
use crate::text::Embedding;

const MAGIC: &[u8; 8] = b"SSTWOTW\0";

/// Query and post towers producing comparable unit-norm embeddings.
///
/// `temperature` and `offset` calibrate the cosine into a probability
/// during training (`sigmoid(temperature * cos + offset)`); retrieval uses
/// the raw cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerModel {
    pub query_tower: MlpParams,
    pub post_tower: MlpParams,
    pub temperature: f64,
    pub offset: f64,
}

impl TwoTowerModel {
    pub fn new(query_tower: MlpParams, post_tower: MlpParams, temperature: f64, offset: f64) -> Result<Self> {
        if query_tower.output_dim() != post_tower.output_dim() {
            return Err(Error::invalid(
                "two-tower model",
                format!(
                    "tower outputs differ: query {} vs post {}",
                    query_tower.output_dim(),
                    post_tower.output_dim()
                ),
            ));
        }
        if query_tower.input_dim() < QUERY_EXTRA_FEATURES || post_tower.input_dim() < POST_EXTRA_FEATURES {
            return Err(Error::invalid("two-tower model", "tower inputs too narrow for side features"));
        }
        if query_tower.input_dim() - QUERY_EXTRA_FEATURES != post_tower.input_dim() - POST_EXTRA_FEATURES {
            return Err(Error::invalid("two-tower model", "towers disagree on text embedding width"));
        }
        if !temperature.is_finite() || !offset.is_finite() {
            return Err(Error::invalid("two-tower model", "non-finite calibration"));
        }
        Ok(TwoTowerModel {
            query_tower,
            post_tower,
            temperature,
            offset,
        })
    }

    /// Randomly initialized towers `(text_dim + extras) -> hidden... -> output_dim`.
    pub fn init<R: Rng + ?Sized>(text_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Result<Self> {
        let dims = |extra: usize| -> Vec<usize> {
            std::iter::once(text_dim + extra)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(output_dim))
                .collect()
        };
        let query_tower = MlpParams::init(&dims(QUERY_EXTRA_FEATURES), rng)?;
        let post_tower = MlpParams::init(&dims(POST_EXTRA_FEATURES), rng)?;
        TwoTowerModel::new(query_tower, post_tower, 5.0, 0.0)
    }

    pub fn text_dim(&self) -> usize {
        self.query_tower.input_dim() - QUERY_EXTRA_FEATURES
    }

    pub fn output_dim(&self) -> usize {
        self.query_tower.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.query_tower.param_count() + self.post_tower.param_count() + 2
    }

    pub fn query_embedding(&self, q: &QuerySideFeatures) -> Result<Embedding> {
        tower_forward(&self.query_tower, &q.to_input())
    }

    pub fn post_embedding(&self, p: &PostSideFeatures) -> Result<Embedding> {
        tower_forward(&self.post_tower, &p.to_input())
    }

    /// Calibrated probability that the pair is relevant.
    pub fn probability(&self, q: &QuerySideFeatures, p: &PostSideFeatures) -> Result<f64> {
        Ok(sigmoid(self.temperature * score_pair(self, q, p)? + self.offset))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, MAGIC)?;
        w.f64(self.temperature)?;
        w.f64(self.offset)?;
        w.mlp(&self.query_tower)?;
        w.mlp(&self.post_tower)?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(checkpoint::open(path)?, MAGIC, "two-tower checkpoint")?;
        let temperature = r.f64()?;
        let offset = r.f64()?;
        let query_tower = r.mlp()?;
        let post_tower = r.mlp()?;
        r.finish()?;
        TwoTowerModel::new(query_tower, post_tower, temperature, offset)
    }
}

/// Runs one tower and L2-normalizes its output.
pub fn tower_forward(tower: &MlpParams, input: &[f64]) -> Result<Embedding> {
    let raw = tower.forward(input)?;
    Embedding::normalized(raw).map_err(|_| Error::invalid("tower output", "zero or non-finite output cannot be normalized"))
}

/// Cosine of the two tower outputs.
pub fn score_pair(model: &TwoTowerModel, q: &QuerySideFeatures, p: &PostSideFeatures) -> Result<f64> {
    let qe = model.query_embedding(q)?;
    let pe = model.post_embedding(p)?;
    Ok(qe.cosine(&pe))
}
