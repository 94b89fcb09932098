//! Okapi BM25 over the shared inverted index.

use crate::corpus::PostId;
use crate::tbr::InvertedIndex;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Collection-level statistics BM25 needs. Per-token document frequency is
/// read from the index's posting lists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
}

impl CorpusStats {
    pub fn new(doc_count: usize, total_len: u64) -> Self {
        let avg_doc_len = if doc_count == 0 {
            0.0
        } else {
            total_len as f64 / doc_count as f64
        };
        CorpusStats {
            doc_count,
            avg_doc_len,
        }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// BM25 of `post_id` for the given (distinct) query tokens. Zero when no
/// token occurs in the post or the post is not indexed.
pub fn bm25(query_tokens: &[String], post_id: PostId, stats: &CorpusStats, index: &InvertedIndex) -> f64 {
    let Some(doc_len) = index.doc_len(post_id) else {
        return 0.0;
    };
    // Corpora where every post tokenizes to nothing.
    let avg = if stats.avg_doc_len > 0.0 { stats.avg_doc_len } else { 1.0 };
    let norm = 1.0 - B + B * doc_len as f64 / avg;
    query_tokens
        .iter()
        .map(|t| {
            let tf = index.term_frequency(t, post_id) as f64;
            if tf == 0.0 {
                return 0.0;
            }
            idf(stats.doc_count, index.doc_freq(t)) * tf * (K1 + 1.0) / (tf + K1 * norm)
        })
        .sum()
}
