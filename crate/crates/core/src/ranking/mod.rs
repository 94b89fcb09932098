//! Two-stage ranking layer.
//!
//! Every candidate gets a [`RankFeatureVector`]. The L1 stage scores all
//! retrieved candidates with a small long-dwell head over a reduced feature
//! set (text embeddings and BM25) and keeps the best few hundred. The L2
//! stage scores those with an on-topicness head and a full-feature
//! long-dwell head and orders them by `alpha * on_topicness + (1 - alpha) *
//! long_dwell`.

pub mod bm25;
mod features;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, BinReader, BinWriter};
use crate::corpus::PostId;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, MlpParams};
use crate::text::Embedding;

pub use features::{extract_features, extract_features_with, RankFeatureVector, FULL_EXTRA_FEATURES, REDUCED_EXTRA_FEATURES};
pub use train::{
    head_loss_and_gradient, train_head, train_ranking_heads, HeadConfig, RankingExample, RankingTrainReport,
};
pub use crate::ebr::TrainReport as HeadReport;

const MAGIC: &[u8; 8] = b"SSRANKM\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    L1,
    L2,
}

/// Which retriever produced a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Tbr,
    Ebr,
    Both,
}

impl Source {
    pub fn merge(self, other: Source) -> Source {
        if self == other {
            self
        } else {
            Source::Both
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    pub stage: Stage,
    /// Present only at L2.
    pub on_topicness: Option<MlpParams>,
    pub long_dwell: MlpParams,
    pub alpha: f64,
}

impl RankingModel {
    pub fn new(stage: Stage, on_topicness: Option<MlpParams>, long_dwell: MlpParams, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if long_dwell.output_dim() != 1 {
            return Err(Error::invalid("ranking model", "long-dwell head must output one logit"));
        }
        let extra = match stage {
            Stage::L1 => REDUCED_EXTRA_FEATURES,
            Stage::L2 => FULL_EXTRA_FEATURES,
        };
        let width = long_dwell.input_dim();
        if width < extra || !(width - extra).is_multiple_of(2) {
            return Err(Error::invalid("ranking model", format!("long-dwell input width {width} fits no text dimension")));
        }
        let text_dim = (width - extra) / 2;
        match (stage, &on_topicness) {
            (Stage::L1, Some(_)) => return Err(Error::invalid("ranking model", "L1 has no on-topicness head")),
            (Stage::L2, None) => return Err(Error::invalid("ranking model", "L2 needs an on-topicness head")),
            (Stage::L2, Some(head)) => {
                if head.input_dim() != 2 * text_dim || head.output_dim() != 1 {
                    return Err(Error::invalid("ranking model", "on-topicness head shape disagrees with long-dwell head"));
                }
            }
            (Stage::L1, None) => {}
        }
        Ok(RankingModel {
            stage,
            on_topicness,
            long_dwell,
            alpha,
        })
    }

    pub fn text_dim(&self) -> usize {
        let extra = match self.stage {
            Stage::L1 => REDUCED_EXTRA_FEATURES,
            Stage::L2 => FULL_EXTRA_FEATURES,
        };
        (self.long_dwell.input_dim() - extra) / 2
    }

    /// Copy with a different fusion weight.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(RankingModel {
            alpha,
            ..self.clone()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, MAGIC)?;
        w.u8(match self.stage {
            Stage::L1 => 1,
            Stage::L2 => 2,
        })?;
        w.f64(self.alpha)?;
        w.u8(self.on_topicness.is_some() as u8)?;
        if let Some(head) = &self.on_topicness {
            w.mlp(head)?;
        }
        w.mlp(&self.long_dwell)?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(checkpoint::open(path)?, MAGIC, "ranking checkpoint")?;
        let stage = match r.u8()? {
            1 => Stage::L1,
            2 => Stage::L2,
            other => {
                return Err(Error::Format {
                    what: "ranking checkpoint",
                    reason: format!("unknown stage tag {other}"),
                })
            }
        };
        let alpha = r.f64()?;
        let on_topicness = match r.u8()? {
            0 => None,
            _ => Some(r.mlp()?),
        };
        let long_dwell = r.mlp()?;
        r.finish()?;
        RankingModel::new(stage, on_topicness, long_dwell, alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} is outside [0, 1]")))
    }
}

fn head_probability(head: &MlpParams, input: &[f64]) -> Result<f64> {
    let out = head.forward(input)?;
    let p = sigmoid(out[0]);
    if !p.is_finite() {
        return Err(Error::invalid("ranking score", "non-finite"));
    }
    Ok(p)
}

/// `sigmoid(MLP(query_text ++ post_text))`.
pub fn on_topicness_score(model: &RankingModel, query_text: &Embedding, post_text: &Embedding) -> Result<f64> {
    let head = model
        .on_topicness
        .as_ref()
        .ok_or_else(|| Error::invalid("ranking model", "this stage has no on-topicness head"))?;
    let mut input = Vec::with_capacity(query_text.dim() + post_text.dim());
    input.extend_from_slice(query_text.as_slice());
    input.extend_from_slice(post_text.as_slice());
    head_probability(head, &input)
}

/// `sigmoid(MLP(features))`, using the feature subset of the model's stage.
pub fn long_dwell_score(model: &RankingModel, features: &RankFeatureVector) -> Result<f64> {
    let input = match model.stage {
        Stage::L1 => features.reduced_input(),
        Stage::L2 => features.full_input(),
    };
    head_probability(&model.long_dwell, &input)
}

/// `alpha * on_topicness + (1 - alpha) * long_dwell`.
pub fn fuse(on_topicness: f64, long_dwell: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * on_topicness + (1.0 - alpha) * long_dwell)
}

/// A retrieved post awaiting a ranking stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RankCandidate {
    pub post_id: PostId,
    pub source: Source,
    pub features: RankFeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub post_id: PostId,
    pub source: Source,
    /// Absent at L1.
    pub on_topicness: Option<f64>,
    pub long_dwell: f64,
    pub fused: f64,
}

pub fn score_candidate(model: &RankingModel, c: &RankCandidate) -> Result<ScoredCandidate> {
    let long_dwell = long_dwell_score(model, &c.features)?;
    let (on_topicness, fused) = match model.stage {
        Stage::L1 => (None, long_dwell),
        Stage::L2 => {
            let s = on_topicness_score(model, &c.features.query_text, &c.features.post_text)?;
            (Some(s), fuse(s, long_dwell, model.alpha)?)
        }
    };
    Ok(ScoredCandidate {
        post_id: c.post_id,
        source: c.source,
        on_topicness,
        long_dwell,
        fused,
    })
}

/// Orders scored candidates by fused score (descending), then post id.
pub fn sort_candidates(v: &mut [ScoredCandidate]) {
    v.sort_by(|a, b| b.fused.total_cmp(&a.fused).then(a.post_id.cmp(&b.post_id)));
}

/// Scores every candidate with `model` and keeps the best `keep`.
pub fn rank_stage(model: &RankingModel, candidates: &[RankCandidate], keep: usize) -> Result<Vec<ScoredCandidate>> {
    if keep == 0 {
        return Err(Error::invalid("keep", "must be at least 1"));
    }
    let mut scored = candidates
        .iter()
        .map(|c| score_candidate(model, c))
        .collect::<Result<Vec<_>>>()?;
    sort_candidates(&mut scored);
    scored.truncate(keep);
    Ok(scored)
}
