//! Embedding-based retrieval.
//!
//! A two-tower model maps the query side and the post side into a shared
//! unit sphere; the retrieval score is the cosine of the two tower outputs.
//! Because the towers never interact, post embeddings are computed ahead of
//! time ([`batch_compute_embeddings`], [`nearline`]) and served from an
//! [`EmbeddingStore`] and an HNSW [`AnnIndex`].

pub mod ann;
mod features;
mod label;
pub mod nearline;
mod store;
mod train;
mod two_tower;

pub use crate::nn::MlpParams;
pub use ann::{AnnConfig, AnnIndex, AnnSearch};
pub use features::{freshness, PostSideFeatures, QuerySideFeatures, QUERY_EXTRA_FEATURES, POST_EXTRA_FEATURES};
pub use label::{aggregate_label, LabelWeights};
pub use store::{batch_compute_embeddings, compute_entry, EmbeddingStore, StoredEmbedding};
pub use train::{
    loss_and_gradient, mean_loss_of, train_from, train_two_tower, TrainConfig, TrainReport, TrainingExample,
    TwoTowerGrads,
};
pub use two_tower::{score_pair, tower_forward, TwoTowerModel};
