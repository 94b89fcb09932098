use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::{tokenize, Embedding, TextEmbedder};

/// Feature-hashed character trigrams.
///
/// Each token is padded as `#token#` and split into character trigrams.
/// Every trigram is hashed with a seeded 64-bit hash: the low bits pick one
/// of `dim` buckets and the top bit picks a sign. The bucket counts are then
/// L2-normalized. Signed hashing keeps unrelated texts near cosine 0 instead
/// of sharing a positive bias.
#[derive(Debug, Clone)]
pub struct HashedTrigramEmbedder {
    dim: usize,
    seed: u64,
}

impl HashedTrigramEmbedder {
    pub const NAME: &'static str = "hashed-trigram";

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedTrigramEmbedder { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returned for text with no trigrams: the all-equal unit vector.
    pub fn canonical_empty(&self) -> Embedding {
        let v = 1.0 / (self.dim as f64).sqrt();
        Embedding::normalized(vec![v; self.dim]).expect("non-zero")
    }

    /// Character trigrams of every token, in order, with repeats.
    pub fn trigrams(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for token in tokenize(text) {
            let padded: Vec<char> = std::iter::once('#')
                .chain(token.chars())
                .chain(std::iter::once('#'))
                .collect();
            for w in padded.windows(3) {
                out.push(w.iter().collect());
            }
        }
        out
    }
}

impl TextEmbedder for HashedTrigramEmbedder {
    fn id(&self) -> &str {
        Self::NAME
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0; self.dim];
        for gram in Self::trigrams(text) {
            let h = xxh3_64_with_seed(gram.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            counts[bucket] += sign;
        }
        // Empty text, or hash collisions that cancel out exactly.
        Embedding::normalized(counts).unwrap_or_else(|_| self.canonical_empty())
    }
}
