use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::features::PostSideFeatures;
use super::two_tower::TwoTowerModel;
use crate::checkpoint::{self, BinReader, BinWriter};
use crate::corpus::{MemberDirectory, Post, PostId};
use crate::error::{Error, Result};
use crate::text::{Embedding, TextEmbedder};

const MAGIC: &[u8; 8] = b"SSEMBST\0";

/// Precomputed vectors for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEmbedding {
    /// Post-tower output used for retrieval.
    pub post: Embedding,
    /// Raw text embedding used by the ranking heads.
    pub text: Embedding,
}

/// Key-value store of precomputed post vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    post_dim: usize,
    text_dim: usize,
    version: u64,
    entries: BTreeMap<PostId, StoredEmbedding>,
}

impl EmbeddingStore {
    pub fn new(post_dim: usize, text_dim: usize) -> Self {
        EmbeddingStore {
            post_dim,
            text_dim,
            version: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn post_dim(&self) -> usize {
        self.post_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    /// Bumped by every batch build and every nearline write.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: PostId) -> Option<&StoredEmbedding> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: PostId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PostId, &StoredEmbedding)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn put(&mut self, id: PostId, entry: StoredEmbedding) -> Result<()> {
        self.check(&entry)?;
        self.entries.insert(id, entry);
        self.version += 1;
        Ok(())
    }

    fn check(&self, entry: &StoredEmbedding) -> Result<()> {
        for (e, want) in [(&entry.post, self.post_dim), (&entry.text, self.text_dim)] {
            if e.dim() != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    actual: e.dim(),
                });
            }
            if (e.norm() - 1.0).abs() > Embedding::NORM_TOLERANCE {
                return Err(Error::invalid("stored embedding", "not unit-norm"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, MAGIC)?;
        w.u64(self.version)?;
        w.u32(self.post_dim as u32)?;
        w.u32(self.text_dim as u32)?;
        w.u64(self.entries.len() as u64)?;
        for (id, e) in &self.entries {
            w.u64(id.0)?;
            w.f64s(e.post.as_slice())?;
            w.f64s(e.text.as_slice())?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(checkpoint::open(path)?, MAGIC, "embedding store")?;
        let version = r.u64()?;
        let post_dim = r.u32()? as usize;
        let text_dim = r.u32()? as usize;
        let n = r.count()?;
        let mut store = EmbeddingStore::new(post_dim, text_dim);
        for _ in 0..n {
            let id = PostId(r.u64()?);
            let bad = |e: Error| Error::Format {
                what: "embedding store",
                reason: format!("post {id}: {e}"),
            };
            let post = Embedding::from_unit(r.f64s(post_dim)?).map_err(bad)?;
            let text = Embedding::from_unit(r.f64s(text_dim)?).map_err(bad)?;
            store.entries.insert(id, StoredEmbedding { post, text });
        }
        r.finish()?;
        store.version = version;
        Ok(store)
    }
}

/// Computes both stored vectors for one post. Pure: the same inputs always
/// produce bitwise-identical output.
pub fn compute_entry(
    model: &TwoTowerModel,
    post: &Post,
    directory: &MemberDirectory,
    embedder: &dyn TextEmbedder,
    as_of: i64,
) -> Result<StoredEmbedding> {
    let text = embedder.embed(&post.text);
    let author = directory.author_or_default(post.author_id);
    let features = PostSideFeatures::new(post, &author, text.clone(), as_of);
    let post_vec = model.post_embedding(&features)?;
    Ok(StoredEmbedding { post: post_vec, text })
}

/// Offline batch job: embeds every post (in parallel) into a fresh store.
pub fn batch_compute_embeddings(
    model: &TwoTowerModel,
    posts: &[Arc<Post>],
    directory: &MemberDirectory,
    embedder: &dyn TextEmbedder,
    as_of: i64,
) -> Result<EmbeddingStore> {
    if embedder.dim() != model.text_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.text_dim(),
            actual: embedder.dim(),
        });
    }
    let computed: Vec<(PostId, StoredEmbedding)> = posts
        .par_iter()
        .map(|p| compute_entry(model, p, directory, embedder, as_of).map(|e| (p.post_id, e)))
        .collect::<Result<_>>()?;
    let mut store = EmbeddingStore::new(model.output_dim(), embedder.dim());
    for (id, e) in computed {
        store.check(&e)?;
        store.entries.insert(id, e);
    }
    store.version = 1;
    Ok(store)
}
