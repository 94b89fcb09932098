//! End-to-end orchestration: retrieval fan-out, candidate union, the L1/L2
//! cascade, offline build and training, nearline ingestion, and the HTTP
//! service.

mod config;
pub mod service;

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::corpus::{IngestReport, InteractionRecord, MemberDirectory, Post, PostId, PostStore, Query};
use crate::ebr::nearline::{Ack, DeadLetter, NearlineQueue, NearlineTargets};
use crate::ebr::{
    aggregate_label, batch_compute_embeddings, train_two_tower, AnnIndex, EmbeddingStore, PostSideFeatures,
    QuerySideFeatures, TrainReport, TrainingExample, TwoTowerModel,
};
use crate::error::{Error, Result};
use crate::ranking::{
    extract_features_with, rank_stage, train_ranking_heads, RankCandidate, RankingExample, RankingModel,
    RankingTrainReport, ScoredCandidate, Source, Stage,
};
use crate::tbr::{retrieve_tbr, InvertedIndex};
use crate::text::{EmbedderRegistry, Embedding, TextEmbedder};

pub use config::{EmbedderConfig, EngineConfig};
pub use service::{ServiceHandle, ShutdownSignal};

/// Which retrievers feed the ranking cascade.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Hybrid,
    TbrOnly,
    EbrOnly,
}

/// Per-request overrides of the engine config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SearchOptions {
    pub alpha: Option<f64>,
    pub page_size: Option<usize>,
    pub mode: RetrievalMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTimings {
    pub retrieval_us: u64,
    pub l1_us: u64,
    pub l2_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResponse {
    pub results: Vec<ScoredCandidate>,
    pub tbr_candidates: usize,
    pub ebr_candidates: usize,
    pub l1_input: usize,
    pub l2_input: usize,
    pub timings: StageTimings,
}

/// Deduplicated retrieval output, ascending by post id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieved {
    pub candidates: Vec<(PostId, Source)>,
    pub tbr_candidates: usize,
    pub ebr_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub two_tower: TrainReport,
    pub l1: RankingTrainReport,
    pub l2: RankingTrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineStats {
    pub posts: usize,
    pub authors: usize,
    pub searchers: usize,
    pub tbr_documents: usize,
    pub tbr_terms: usize,
    pub ebr_vectors: usize,
    pub ann_nodes: usize,
    pub store_version: u64,
    pub trained: bool,
    pub searches: u64,
    pub nearline_processed: u64,
    pub dead_letters: Vec<DeadLetter>,
}

#[derive(Debug, Clone)]
struct Models {
    two_tower: Arc<TwoTowerModel>,
    l1: RankingModel,
    l2: RankingModel,
}

pub struct Engine {
    config: EngineConfig,
    posts: PostStore,
    directory: Arc<RwLock<MemberDirectory>>,
    embedder: Arc<dyn TextEmbedder>,
    tbr: Arc<RwLock<InvertedIndex>>,
    store: Arc<RwLock<EmbeddingStore>>,
    ann: Arc<RwLock<AnnIndex>>,
    models: Option<Models>,
    nearline: Option<NearlineQueue>,
    searches: AtomicU64,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

impl Engine {
    /// An engine whose corpus lives only in memory.
    pub fn in_memory(config: EngineConfig) -> Result<Self> {
        Engine::assemble(config, PostStore::in_memory(), &EmbedderRegistry::default())
    }

    /// Opens (or creates) the engine state under `config.data_dir`.
    pub fn open(config: EngineConfig) -> Result<Self> {
        Engine::open_with(config, &EmbedderRegistry::default())
    }

    pub fn open_with(config: EngineConfig, registry: &EmbedderRegistry) -> Result<Self> {
        let posts = PostStore::open(config.posts_path())?;
        let mut engine = Engine::assemble(config, posts, registry)?;
        let c = engine.config.clone();
        if c.members_path().exists() {
            let file = std::fs::File::open(c.members_path()).map_err(|e| Error::io(c.members_path(), e))?;
            *engine.directory.write() = MemberDirectory::load(std::io::BufReader::new(file))?;
        }
        if c.tbr_path().exists() {
            let index = InvertedIndex::load(&c.tbr_path())?;
            if index.doc_count() == engine.posts.len() {
                *engine.tbr.write() = index;
            } else {
                tracing::warn!("inverted index snapshot is stale, rebuilding");
                engine.build_tbr()?;
            }
        } else {
            engine.build_tbr()?;
        }
        let model_files = [c.two_tower_path(), c.l1_path(), c.l2_path()];
        if model_files.iter().all(|p| p.exists()) {
            let models = Models {
                two_tower: Arc::new(TwoTowerModel::load(&c.two_tower_path())?),
                l1: RankingModel::load(&c.l1_path())?,
                l2: RankingModel::load(&c.l2_path())?.with_alpha(c.alpha)?,
            };
            engine.check_models(&models)?;
            engine.models = Some(models);
            if c.embeddings_path().exists() {
                let store = EmbeddingStore::load(&c.embeddings_path())?;
                engine.install_store(store)?;
            } else {
                engine.build_embeddings()?;
            }
        } else if model_files.iter().any(|p| p.exists()) {
            return Err(Error::Uninitialized("some model checkpoints are missing; rerun training"));
        }
        Ok(engine)
    }

    fn assemble(config: EngineConfig, posts: PostStore, registry: &EmbedderRegistry) -> Result<Self> {
        config.validate()?;
        let e = &config.embedder;
        let embedder = registry.build(&e.name, e.dim, e.seed)?;
        if embedder.dim() != e.dim {
            return Err(Error::DimensionMismatch {
                expected: e.dim,
                actual: embedder.dim(),
            });
        }
        let ann = AnnIndex::new(1, config.ann.clone())?;
        Ok(Engine {
            posts,
            directory: Arc::new(RwLock::new(MemberDirectory::new())),
            embedder,
            tbr: Arc::new(RwLock::new(InvertedIndex::new())),
            store: Arc::new(RwLock::new(EmbeddingStore::new(1, e.dim))),
            ann: Arc::new(RwLock::new(ann)),
            models: None,
            nearline: None,
            searches: AtomicU64::new(0),
            config,
        })
    }

    fn check_models(&self, m: &Models) -> Result<()> {
        let d = self.embedder.dim();
        for (what, got) in [
            ("two-tower", m.two_tower.text_dim()),
            ("L1", m.l1.text_dim()),
            ("L2", m.l2.text_dim()),
        ] {
            if got != d {
                return Err(Error::Config(format!("{what} model expects text dimension {got}, embedder gives {d}")));
            }
        }
        if m.l1.stage != Stage::L1 || m.l2.stage != Stage::L2 {
            return Err(Error::Config("ranking checkpoints have the wrong stage".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn posts(&self) -> &PostStore {
        &self.posts
    }

    pub fn embedder(&self) -> &Arc<dyn TextEmbedder> {
        &self.embedder
    }

    pub fn directory(&self) -> &Arc<RwLock<MemberDirectory>> {
        &self.directory
    }

    pub fn tbr(&self) -> &Arc<RwLock<InvertedIndex>> {
        &self.tbr
    }

    pub fn embedding_store(&self) -> &Arc<RwLock<EmbeddingStore>> {
        &self.store
    }

    pub fn ann(&self) -> &Arc<RwLock<AnnIndex>> {
        &self.ann
    }

    pub fn two_tower(&self) -> Option<&Arc<TwoTowerModel>> {
        self.models.as_ref().map(|m| &m.two_tower)
    }

    pub fn ranking_models(&self) -> Option<(&RankingModel, &RankingModel)> {
        self.models.as_ref().map(|m| (&m.l1, &m.l2))
    }

    pub fn is_trained(&self) -> bool {
        self.models.is_some()
    }

    /// Appends posts to the corpus. Indexes are not touched; call
    /// [`Engine::build_tbr`] (and retrain or [`Engine::build_embeddings`]).
    pub fn ingest_posts<R: BufRead>(&self, source: R) -> Result<IngestReport> {
        self.posts.ingest_posts(source)
    }

    pub fn add_post(&self, post: Post) -> Result<Arc<Post>> {
        self.posts.insert(post)
    }

    /// Merges author and searcher records into the member directory.
    pub fn load_members<R: BufRead>(&self, source: R) -> Result<usize> {
        let loaded = MemberDirectory::load(source)?;
        let mut dir = self.directory.write();
        let mut n = 0;
        for record in loaded.records() {
            dir.insert(record)?;
            n += 1;
        }
        Ok(n)
    }

    /// Rebuilds the inverted index from the whole corpus.
    pub fn build_tbr(&self) -> Result<()> {
        let posts = self.posts.posts();
        let index = InvertedIndex::build(posts.iter().map(|p| p.as_ref()))?;
        *self.tbr.write() = index;
        Ok(())
    }

    /// Offline batch job: recomputes every stored embedding and rebuilds the
    /// ANN graph from it.
    pub fn build_embeddings(&self) -> Result<()> {
        let models = self.models.as_ref().ok_or(Error::Uninitialized("no trained two-tower model"))?;
        let posts = self.posts.posts();
        let store = {
            let dir = self.directory.read();
            batch_compute_embeddings(&models.two_tower, &posts, &dir, self.embedder.as_ref(), self.config.as_of)?
        };
        self.install_store(store)
    }

    fn install_store(&self, store: EmbeddingStore) -> Result<()> {
        let ann = AnnIndex::build(store.post_dim(), self.config.ann.clone(), store.iter().map(|(id, e)| (id, &e.post)))?;
        *self.store.write() = store;
        *self.ann.write() = ann;
        Ok(())
    }

    fn two_tower_examples(&self, interactions: &[InteractionRecord]) -> Result<Vec<TrainingExample>> {
        let dir = self.directory.read();
        let c = &self.config;
        interactions
            .iter()
            .map(|r| {
                let post = self.posts.get_post(r.post_id)?;
                let searcher = dir.searcher_or_anonymous(r.query.searcher_id);
                let author = dir.author_or_default(post.author_id);
                Ok(TrainingExample {
                    query: QuerySideFeatures::new(&r.query, &searcher, self.embedder.as_ref()),
                    post: PostSideFeatures::new(&post, &author, self.embedder.embed(&post.text), c.as_of),
                    label: aggregate_label(r.on_topic, r.dwell_seconds, post.post_type, &c.dwell_thresholds, &c.label_weights)?,
                })
            })
            .collect()
    }

    fn ranking_examples(&self, interactions: &[InteractionRecord]) -> Result<Vec<RankingExample>> {
        let dir = self.directory.read();
        let tbr = self.tbr.read();
        let c = &self.config;
        interactions
            .iter()
            .map(|r| {
                let post = self.posts.get_post(r.post_id)?;
                let searcher = dir.searcher_or_anonymous(r.query.searcher_id);
                let author = dir.author_or_default(post.author_id);
                let features = extract_features_with(
                    &r.query,
                    &self.embedder.embed(&r.query.text),
                    &post,
                    &self.embedder.embed(&post.text),
                    &searcher,
                    &author,
                    &tbr,
                    c.as_of,
                )?;
                Ok(RankingExample {
                    features,
                    on_topic: r.on_topic,
                    long_dwell: c.dwell_thresholds.is_long_dwell(post.post_type, r.dwell_seconds)?,
                })
            })
            .collect()
    }

    /// Trains the two-tower model and both ranking stages, then recomputes
    /// the embedding store and the ANN graph.
    pub fn train(&mut self, interactions: &[InteractionRecord]) -> Result<TrainSummary> {
        if interactions.is_empty() {
            return Err(Error::invalid("training set", "no interactions"));
        }
        if self.nearline.is_some() {
            return Err(Error::invalid("engine", "stop nearline ingestion before training"));
        }
        if self.tbr.read().doc_count() != self.posts.len() {
            self.build_tbr()?;
        }
        let c = self.config.clone();
        let tt_examples = self.two_tower_examples(interactions)?;
        let (two_tower, tt_report) = train_two_tower(&tt_examples, &c.two_tower, c.seed)?;
        tracing::info!(loss = tt_report.final_loss, "two-tower trained");
        let rank_examples = self.ranking_examples(interactions)?;
        let (l1, l1_report) = train_ranking_heads(&rank_examples, Stage::L1, &c.l1, c.alpha, c.seed.wrapping_add(1))?;
        let (l2, l2_report) = train_ranking_heads(&rank_examples, Stage::L2, &c.l2, c.alpha, c.seed.wrapping_add(2))?;
        self.models = Some(Models {
            two_tower: Arc::new(two_tower),
            l1,
            l2,
        });
        self.build_embeddings()?;
        Ok(TrainSummary {
            examples: interactions.len(),
            two_tower: tt_report,
            l1: l1_report,
            l2: l2_report,
        })
    }

    /// Writes indexes, member file, embeddings and model checkpoints to the
    /// data directory.
    pub fn save(&self) -> Result<()> {
        let c = &self.config;
        std::fs::create_dir_all(&c.data_dir).map_err(|e| Error::io(&c.data_dir, e))?;
        self.tbr.read().save(&c.tbr_path())?;
        write_members(&self.directory.read(), &c.members_path())?;
        if let Some(m) = &self.models {
            m.two_tower.save(&c.two_tower_path())?;
            m.l1.save(&c.l1_path())?;
            m.l2.save(&c.l2_path())?;
            self.store.read().save(&c.embeddings_path())?;
        }
        Ok(())
    }

    /// Starts the nearline consumer. Requires trained models.
    pub fn start_nearline(&mut self) -> Result<()> {
        if self.nearline.is_some() {
            return Ok(());
        }
        let models = self.models.as_ref().ok_or(Error::Uninitialized("no trained models"))?;
        self.nearline = Some(NearlineQueue::spawn(NearlineTargets {
            model: Arc::clone(&models.two_tower),
            embedder: Arc::clone(&self.embedder),
            directory: Arc::clone(&self.directory),
            as_of: self.config.as_of,
            store: Arc::clone(&self.store),
            ann: Arc::clone(&self.ann),
            tbr: Arc::clone(&self.tbr),
        }));
        Ok(())
    }

    pub fn stop_nearline(&mut self) {
        if let Some(q) = self.nearline.take() {
            q.shutdown();
        }
    }

    /// Persists a new post, then blocks until the nearline consumer has made
    /// it visible to both retrievers.
    pub fn publish(&self, post: Post) -> Result<Ack> {
        let queue = self.nearline.as_ref().ok_or(Error::Uninitialized("nearline ingestion is not running"))?;
        let post = self.posts.insert(post)?;
        let id = post.post_id;
        queue.submit(post)?.wait().map_err(|letter| Error::Nearline {
            post_id: id,
            reason: letter.reason,
        })
    }

    pub fn stats(&self) -> EngineStats {
        let dir = self.directory.read();
        let tbr = self.tbr.read();
        let store = self.store.read();
        EngineStats {
            posts: self.posts.len(),
            authors: dir.author_count(),
            searchers: dir.searcher_count(),
            tbr_documents: tbr.doc_count(),
            tbr_terms: tbr.term_count(),
            ebr_vectors: store.len(),
            ann_nodes: self.ann.read().len(),
            store_version: store.version(),
            trained: self.models.is_some(),
            searches: self.searches.load(Ordering::Relaxed),
            nearline_processed: self.nearline.as_ref().map_or(0, |q| q.processed()),
            dead_letters: self.nearline.as_ref().map_or_else(Vec::new, |q| q.dead_letters()),
        }
    }

    fn models(&self) -> Result<&Models> {
        self.models.as_ref().ok_or(Error::Uninitialized("no trained models"))
    }

    /// Query embedding from the query tower.
    pub fn query_embedding(&self, query: &Query) -> Result<Embedding> {
        let models = self.models()?;
        let searcher = self.directory.read().searcher_or_anonymous(query.searcher_id);
        models
            .two_tower
            .query_embedding(&QuerySideFeatures::new(query, &searcher, self.embedder.as_ref()))
    }

    /// EBR alone: the `k` nearest stored posts under the configured scan limit.
    pub fn ebr_search(&self, query: &Query, k: usize) -> Result<Vec<(PostId, f64)>> {
        query.validate()?;
        let q = self.query_embedding(query)?;
        let limit = self.config.scan_limit.max(k);
        Ok(self.ann.read().search(q.as_slice(), k, limit)?.results)
    }

    /// Candidate union of both retrievers, restricted to posts visible in
    /// `tbr` (posts mid-way through nearline publication are skipped).
    fn retrieve_locked(&self, query: &Query, tbr: &InvertedIndex, mode: RetrievalMode) -> Result<Retrieved> {
        let c = &self.config;
        let mut union: BTreeMap<PostId, Source> = BTreeMap::new();
        let mut out = Retrieved::default();
        if mode != RetrievalMode::EbrOnly {
            let hits = retrieve_tbr(tbr, &query.text, c.k_tbr)?;
            out.tbr_candidates = hits.len();
            for (id, _) in hits {
                union.insert(id, Source::Tbr);
            }
        }
        if mode != RetrievalMode::TbrOnly {
            let q = self.query_embedding(query)?;
            let hits = self.ann.read().search(q.as_slice(), c.k_ebr, c.scan_limit)?.results;
            out.ebr_candidates = hits.len();
            for (id, _) in hits {
                if !tbr.contains(id) {
                    continue;
                }
                union
                    .entry(id)
                    .and_modify(|s| *s = s.merge(Source::Ebr))
                    .or_insert(Source::Ebr);
            }
        }
        out.candidates = union.into_iter().collect();
        Ok(out)
    }

    pub fn retrieve(&self, query: &Query, mode: RetrievalMode) -> Result<Retrieved> {
        query.validate()?;
        self.models()?;
        let tbr = self.tbr.read();
        self.retrieve_locked(query, &tbr, mode)
    }

    pub fn search(&self, query: &Query) -> Result<SearchResponse> {
        self.search_with(query, &SearchOptions::default())
    }

    pub fn search_with(&self, query: &Query, options: &SearchOptions) -> Result<SearchResponse> {
        let start = Instant::now();
        query.validate()?;
        let models = self.models()?;
        let page_size = options.page_size.unwrap_or(self.config.page_size);
        if page_size == 0 {
            return Err(Error::invalid("page_size", "must be at least 1"));
        }
        let l2_model = match options.alpha {
            Some(a) if a != models.l2.alpha => std::borrow::Cow::Owned(models.l2.with_alpha(a)?),
            _ => std::borrow::Cow::Borrowed(&models.l2),
        };

        let tbr = self.tbr.read();
        let retrieved = self.retrieve_locked(query, &tbr, options.mode)?;
        let retrieval_us = micros(start);

        let l1_start = Instant::now();
        let candidates = self.rank_candidates(query, &tbr, &retrieved.candidates)?;
        drop(tbr);
        let l1_input = candidates.len();
        let l1_out = rank_stage(&models.l1, &candidates, self.config.keep_l1)?;
        let l1_us = micros(l1_start);

        let l2_start = Instant::now();
        let by_id: BTreeMap<PostId, &RankCandidate> = candidates.iter().map(|c| (c.post_id, c)).collect();
        let l2_in: Vec<RankCandidate> = l1_out.iter().map(|s| by_id[&s.post_id].clone()).collect();
        let results = rank_stage(&l2_model, &l2_in, page_size)?;
        let l2_us = micros(l2_start);

        self.searches.fetch_add(1, Ordering::Relaxed);
        Ok(SearchResponse {
            results,
            tbr_candidates: retrieved.tbr_candidates,
            ebr_candidates: retrieved.ebr_candidates,
            l1_input,
            l2_input: l2_in.len(),
            timings: StageTimings {
                retrieval_us,
                l1_us,
                l2_us,
                total_us: micros(start),
            },
        })
    }

    fn rank_candidates(&self, query: &Query, tbr: &InvertedIndex, ids: &[(PostId, Source)]) -> Result<Vec<RankCandidate>> {
        let dir = self.directory.read();
        let store = self.store.read();
        let searcher = dir.searcher_or_anonymous(query.searcher_id);
        let query_text = self.embedder.embed(&query.text);
        ids.iter()
            .map(|&(id, source)| {
                let post = self.posts.get_post(id)?;
                let author = dir.author_or_default(post.author_id);
                let post_text = match store.get(id) {
                    Some(e) => e.text.clone(),
                    None => self.embedder.embed(&post.text),
                };
                let features =
                    extract_features_with(query, &query_text, &post, &post_text, &searcher, &author, tbr, self.config.as_of)?;
                Ok(RankCandidate {
                    post_id: id,
                    source,
                    features,
                })
            })
            .collect()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop_nearline();
    }
}

fn write_members(dir: &MemberDirectory, path: &Path) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for record in dir.records() {
            serde_json::to_writer(&mut w, &record).map_err(|e| Error::Format {
                what: "member record",
                reason: e.to_string(),
            })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
