//! Token-based retrieval over an inverted index.
//!
//! A post is a candidate only if it contains every distinct query token.
//! Candidates are truncated by BM25 (descending), ties broken by ascending
//! post id.

mod intersect;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::checkpoint::{self, BinReader, BinWriter};
use crate::corpus::{Post, PostId};
use crate::error::{Error, Result};
use crate::ranking::bm25::{bm25, CorpusStats};
use crate::text::{distinct_tokens, tokenize};

pub use intersect::{intersect, IntersectStats};

const SNAPSHOT_MAGIC: &[u8; 8] = b"SSTBRIX\0";

/// Post ids containing one token, ascending, with per-post term frequency.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostingList {
    ids: Vec<PostId>,
    tfs: Vec<u32>,
}

impl PostingList {
    pub fn ids(&self) -> &[PostId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn term_frequency(&self, id: PostId) -> u32 {
        match self.ids.binary_search(&id) {
            Ok(i) => self.tfs[i],
            Err(_) => 0,
        }
    }

    fn insert(&mut self, id: PostId, tf: u32) {
        match self.ids.last() {
            Some(last) if *last >= id => {
                let at = self.ids.binary_search(&id).unwrap_err();
                self.ids.insert(at, id);
                self.tfs.insert(at, tf);
            }
            _ => {
                self.ids.push(id);
                self.tfs.push(tf);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedIndex {
    postings: HashMap<String, PostingList>,
    doc_len: HashMap<PostId, u32>,
    total_len: u64,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<'a>(posts: impl IntoIterator<Item = &'a Post>) -> Result<Self> {
        let mut index = InvertedIndex::new();
        for p in posts {
            index.index_post(p)?;
        }
        Ok(index)
    }

    /// Adds every distinct token of `post.text` to its posting list.
    pub fn index_post(&mut self, post: &Post) -> Result<()> {
        if self.doc_len.contains_key(&post.post_id) {
            return Err(Error::DuplicatePost(post.post_id));
        }
        let tokens = tokenize(&post.text);
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for (token, tf) in counts {
            self.postings.entry(token).or_default().insert(post.post_id, tf);
        }
        self.doc_len.insert(post.post_id, tokens.len() as u32);
        self.total_len += tokens.len() as u64;
        Ok(())
    }

    pub fn postings(&self, token: &str) -> Option<&PostingList> {
        self.postings.get(token)
    }

    pub fn doc_freq(&self, token: &str) -> usize {
        self.postings.get(token).map_or(0, PostingList::len)
    }

    pub fn term_frequency(&self, token: &str, id: PostId) -> u32 {
        self.postings.get(token).map_or(0, |p| p.term_frequency(id))
    }

    pub fn doc_len(&self, id: PostId) -> Option<u32> {
        self.doc_len.get(&id).copied()
    }

    pub fn contains(&self, id: PostId) -> bool {
        self.doc_len.contains_key(&id)
    }

    pub fn doc_count(&self) -> usize {
        self.doc_len.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn total_len(&self) -> u64 {
        self.total_len
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats::new(self.doc_count(), self.total_len)
    }

    /// Ids of posts containing all of `tokens`, ascending. Empty when
    /// `tokens` is empty or any token is unknown.
    pub fn candidates(&self, tokens: &[String], stats: &mut IntersectStats) -> Vec<PostId> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let mut lists = Vec::with_capacity(tokens.len());
        for t in tokens {
            match self.postings.get(t) {
                Some(p) => lists.push(p.ids()),
                None => return Vec::new(),
            }
        }
        intersect(&lists, stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(checkpoint::create(path)?, SNAPSHOT_MAGIC)?;
        let mut docs: Vec<_> = self.doc_len.iter().collect();
        docs.sort();
        w.u64(docs.len() as u64)?;
        for (id, len) in docs {
            w.u64(id.0)?;
            w.u32(*len)?;
        }
        let mut terms: Vec<_> = self.postings.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        w.u64(terms.len() as u64)?;
        for (term, list) in terms {
            w.str(term)?;
            w.u64(list.len() as u64)?;
            for (id, tf) in list.ids.iter().zip(&list.tfs) {
                w.u64(id.0)?;
                w.u32(*tf)?;
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(checkpoint::open(path)?, SNAPSHOT_MAGIC, "inverted index snapshot")?;
        let mut index = InvertedIndex::new();
        for _ in 0..r.count()? {
            let id = PostId(r.u64()?);
            let len = r.u32()?;
            index.doc_len.insert(id, len);
            index.total_len += len as u64;
        }
        for _ in 0..r.count()? {
            let term = r.str()?;
            let n = r.count()?;
            let mut list = PostingList {
                ids: Vec::with_capacity(n),
                tfs: Vec::with_capacity(n),
            };
            for _ in 0..n {
                list.ids.push(PostId(r.u64()?));
                list.tfs.push(r.u32()?);
            }
            if list.ids.windows(2).any(|w| w[0] >= w[1]) || list.ids.iter().any(|id| !index.doc_len.contains_key(id)) {
                return Err(Error::Format {
                    what: "inverted index snapshot",
                    reason: format!("posting list for {term:?} is unsorted or dangling"),
                });
            }
            index.postings.insert(term, list);
        }
        r.finish()?;
        Ok(index)
    }
}

/// Conjunctive retrieval: posts containing every distinct query token, best
/// `limit` by BM25 (descending, then ascending id).
pub fn retrieve_tbr(index: &InvertedIndex, query_text: &str, limit: usize) -> Result<Vec<(PostId, f64)>> {
    if limit == 0 {
        return Err(Error::invalid("limit", "must be positive"));
    }
    let tokens = distinct_tokens(query_text);
    let ids = index.candidates(&tokens, &mut IntersectStats::default());
    let stats = index.stats();
    let mut scored: Vec<(PostId, f64)> = ids
        .into_iter()
        .map(|id| (id, bm25(&tokens, id, &stats, index)))
        .collect();
    sort_scored(&mut scored);
    scored.truncate(limit);
    Ok(scored)
}

/// Descending score, then ascending id.
pub fn sort_scored(v: &mut [(PostId, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MemberId, PostType};

    fn post(id: u64, text: &str) -> Post {
        Post {
            post_id: PostId(id),
            text: text.into(),
            post_type: PostType::Text,
            author_id: MemberId(1),
            created_at: 0,
            popularity: 0.0,
        }
    }

    #[test]
    fn index_post_populates_postings() {
        let mut idx = InvertedIndex::new();
        idx.index_post(&post(5, "ask for raise")).unwrap();
        for t in ["ask", "for", "raise"] {
            assert_eq!(idx.postings(t).unwrap().ids(), &[PostId(5)]);
        }
        assert_eq!(idx.doc_len(PostId(5)), Some(3));
    }

    #[test]
    fn duplicate_index_is_rejected() {
        let mut idx = InvertedIndex::new();
        idx.index_post(&post(5, "a")).unwrap();
        assert!(matches!(idx.index_post(&post(5, "b")), Err(Error::DuplicatePost(_))));
        assert_eq!(idx.doc_count(), 1);
    }

    #[test]
    fn out_of_order_ids_stay_sorted() {
        let mut idx = InvertedIndex::new();
        for id in [9, 3, 7, 1] {
            idx.index_post(&post(id, "shared word")).unwrap();
        }
        let ids: Vec<u64> = idx.postings("shared").unwrap().ids().iter().map(|p| p.0).collect();
        assert_eq!(ids, [1, 3, 7, 9]);
    }

    #[test]
    fn conjunctive_retrieval() {
        let idx = InvertedIndex::build(&[post(1, "a"), post(2, "a b"), post(3, "a b"), post(4, "b")]).unwrap();
        let mut got: Vec<u64> = retrieve_tbr(&idx, "a b", 10).unwrap().iter().map(|r| r.0 .0).collect();
        got.sort();
        assert_eq!(got, [2, 3]);
        assert!(retrieve_tbr(&idx, "a zebra", 10).unwrap().is_empty());
        assert!(retrieve_tbr(&idx, "?!", 10).unwrap().is_empty());
        assert!(retrieve_tbr(&idx, "a", 0).is_err());
    }

    #[test]
    fn truncation_prefers_bm25_then_low_id() {
        let idx = InvertedIndex::build(&[
            post(1, "raise raise raise salary"),
            post(2, "raise and many other filler words here"),
            post(3, "raise"),
            post(4, "raise"),
        ])
        .unwrap();
        let got = retrieve_tbr(&idx, "raise", 3).unwrap();
        assert_eq!(got[0].0, PostId(1));
        // 3 and 4 tie exactly; lower id wins.
        assert_eq!(got[1].0, PostId(3));
        assert_eq!(got[2].0, PostId(4));
        assert_eq!(got[1].1, got[2].1);
    }

    #[test]
    fn snapshot_roundtrip() {
        let idx = InvertedIndex::build(&[post(1, "a b b"), post(7, "b c"), post(3, "é c")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tbr.bin");
        idx.save(&path).unwrap();
        assert_eq!(InvertedIndex::load(&path).unwrap(), idx);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(InvertedIndex::load(&path).is_err());
    }
}
