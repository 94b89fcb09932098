use crate::corpus::{Author, Post, Query, Searcher};
use crate::text::{Embedding, TextEmbedder};

pub const QUERY_EXTRA_FEATURES: usize = 2;
pub const POST_EXTRA_FEATURES: usize = 3;

const SECONDS_PER_DAY: f64 = 86_400.0;
const FRESHNESS_DAYS: f64 = 30.0;

/// `exp(-age_days / 30)`; posts dated after `as_of` count as brand new.
pub fn freshness(created_at: i64, as_of: i64) -> f64 {
    let age_days = (as_of - created_at).max(0) as f64 / SECONDS_PER_DAY;
    (-age_days / FRESHNESS_DAYS).exp()
}

/// Query-tower input: query text embedding plus query and searcher flags.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySideFeatures {
    pub text: Embedding,
    pub contains_job_title: bool,
    pub job_seeking_intent: bool,
}

impl QuerySideFeatures {
    pub fn new(query: &Query, searcher: &Searcher, embedder: &dyn TextEmbedder) -> Self {
        QuerySideFeatures {
            text: embedder.embed(&query.text),
            contains_job_title: query.contains_job_title,
            job_seeking_intent: searcher.job_seeking_intent,
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.text.dim() + QUERY_EXTRA_FEATURES);
        v.extend_from_slice(self.text.as_slice());
        v.push(self.contains_job_title as u8 as f64);
        v.push(self.job_seeking_intent as u8 as f64);
        v
    }
}

/// Post-tower input: post text embedding plus post and author features.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSideFeatures {
    pub text: Embedding,
    pub popularity: f64,
    pub author_popularity: f64,
    pub freshness: f64,
}

impl PostSideFeatures {
    pub fn new(post: &Post, author: &Author, text: Embedding, as_of: i64) -> Self {
        PostSideFeatures {
            text,
            popularity: post.popularity,
            author_popularity: author.popularity,
            freshness: freshness(post.created_at, as_of),
        }
    }

    pub fn to_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.text.dim() + POST_EXTRA_FEATURES);
        v.extend_from_slice(self.text.as_slice());
        v.push(self.popularity);
        v.push(self.author_popularity);
        v.push(self.freshness);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freshness_decay() {
        assert_eq!(freshness(100, 100), 1.0);
        assert_eq!(freshness(200, 100), 1.0);
        let thirty_days = 30 * 86_400;
        assert!((freshness(0, thirty_days) - (-1.0f64).exp()).abs() < 1e-15);
        let f = freshness(0, 10 * thirty_days);
        assert!(f > 0.0 && f < 1e-4);
    }
}
