use crate::corpus::{Author, Post, Query, Searcher};
use crate::ebr::freshness;
use crate::error::{Error, Result};
use crate::tbr::InvertedIndex;
use crate::text::{distinct_tokens, Embedding, TextEmbedder};

use super::bm25::bm25;

/// Scalar features appended after the two text embeddings at L2.
pub const FULL_EXTRA_FEATURES: usize = 7;
/// Scalar features appended after the two text embeddings at L1 (BM25 only).
pub const REDUCED_EXTRA_FEATURES: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RankFeatureVector {
    pub query_text: Embedding,
    pub post_text: Embedding,
    pub bm25: f64,
    pub contains_job_title: bool,
    pub post_popularity: f64,
    pub post_freshness: f64,
    pub job_seeking_intent: bool,
    pub author_popularity: f64,
    pub searcher_author_connected: bool,
}

fn flag(b: bool) -> f64 {
    b as u8 as f64
}

impl RankFeatureVector {
    fn texts(&self, extra: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.query_text.dim() + self.post_text.dim() + extra);
        v.extend_from_slice(self.query_text.as_slice());
        v.extend_from_slice(self.post_text.as_slice());
        v
    }

    /// BM25 is unbounded, so the heads see `ln(1 + bm25)`.
    pub fn bm25_input(&self) -> f64 {
        self.bm25.ln_1p()
    }

    /// L1 input: both text embeddings and BM25.
    pub fn reduced_input(&self) -> Vec<f64> {
        let mut v = self.texts(REDUCED_EXTRA_FEATURES);
        v.push(self.bm25_input());
        v
    }

    /// L2 input, in the fixed field order.
    pub fn full_input(&self) -> Vec<f64> {
        let mut v = self.texts(FULL_EXTRA_FEATURES);
        v.extend([
            self.bm25_input(),
            flag(self.contains_job_title),
            self.post_popularity,
            self.post_freshness,
            flag(self.job_seeking_intent),
            self.author_popularity,
            flag(self.searcher_author_connected),
        ]);
        v
    }
}

/// Builds the feature vector from precomputed text embeddings.
#[allow(clippy::too_many_arguments)]
pub fn extract_features_with(
    query: &Query,
    query_text: &Embedding,
    post: &Post,
    post_text: &Embedding,
    searcher: &Searcher,
    author: &Author,
    index: &InvertedIndex,
    as_of: i64,
) -> Result<RankFeatureVector> {
    if searcher.searcher_id != query.searcher_id {
        return Err(Error::invalid(
            "ranking features",
            format!("searcher {} does not match query searcher {}", searcher.searcher_id, query.searcher_id),
        ));
    }
    if author.author_id != post.author_id {
        return Err(Error::invalid(
            "ranking features",
            format!("author {} does not match post author {}", author.author_id, post.author_id),
        ));
    }
    if !index.contains(post.post_id) {
        return Err(Error::PostNotFound(post.post_id));
    }
    if query_text.dim() != post_text.dim() {
        return Err(Error::DimensionMismatch {
            expected: query_text.dim(),
            actual: post_text.dim(),
        });
    }
    let tokens = distinct_tokens(&query.text);
    Ok(RankFeatureVector {
        query_text: query_text.clone(),
        post_text: post_text.clone(),
        bm25: bm25(&tokens, post.post_id, &index.stats(), index),
        contains_job_title: query.contains_job_title,
        post_popularity: post.popularity,
        post_freshness: freshness(post.created_at, as_of),
        job_seeking_intent: searcher.job_seeking_intent,
        author_popularity: author.popularity,
        searcher_author_connected: searcher.is_connected_to(post.author_id),
    })
}

/// Embeds both texts with `embedder` and builds the feature vector.
pub fn extract_features(
    query: &Query,
    post: &Post,
    searcher: &Searcher,
    author: &Author,
    index: &InvertedIndex,
    embedder: &dyn TextEmbedder,
    as_of: i64,
) -> Result<RankFeatureVector> {
    extract_features_with(
        query,
        &embedder.embed(&query.text),
        post,
        &embedder.embed(&post.text),
        searcher,
        author,
        index,
        as_of,
    )
}
