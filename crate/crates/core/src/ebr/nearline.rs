//! Nearline indexing of newly created posts.
//!
//! Posts that are already durable in the corpus are queued here. A single
//! consumer thread takes them in FIFO order, computes their embeddings, and
//! publishes them to the embedding store, the ANN graph, and the inverted
//! index (in that order) before acknowledging. Posts that fail are parked
//! in a dead-letter list and the queue keeps going.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::ann::AnnIndex;
use super::store::{compute_entry, EmbeddingStore};
use super::two_tower::TwoTowerModel;
use crate::corpus::{MemberDirectory, Post, PostId};
use crate::error::{Error, Result};
use crate::tbr::InvertedIndex;
use crate::text::TextEmbedder;

/// Everything the consumer reads or writes.
#[derive(Clone)]
pub struct NearlineTargets {
    pub model: Arc<TwoTowerModel>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub directory: Arc<RwLock<MemberDirectory>>,
    pub as_of: i64,
    pub store: Arc<RwLock<EmbeddingStore>>,
    pub ann: Arc<RwLock<AnnIndex>>,
    pub tbr: Arc<RwLock<InvertedIndex>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub post_id: PostId,
    /// Embedding-store version right after this post was written.
    pub store_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadLetter {
    pub post_id: PostId,
    pub reason: String,
}

/// Receives the outcome for one submitted post.
pub struct AckReceiver(Receiver<std::result::Result<Ack, DeadLetter>>);

impl AckReceiver {
    pub fn wait(self) -> std::result::Result<Ack, DeadLetter> {
        self.0.recv().unwrap_or_else(|_| Err(shutdown_letter()))
    }

    pub fn wait_timeout(self, timeout: Duration) -> Option<std::result::Result<Ack, DeadLetter>> {
        self.0.recv_timeout(timeout).ok()
    }
}

fn shutdown_letter() -> DeadLetter {
    DeadLetter {
        post_id: PostId(u64::MAX),
        reason: "nearline consumer stopped".into(),
    }
}

struct Job {
    post: Arc<Post>,
    ack: SyncSender<std::result::Result<Ack, DeadLetter>>,
}

#[derive(Default)]
struct Counters {
    processed: AtomicU64,
}

pub struct NearlineQueue {
    tx: Mutex<Option<Sender<Job>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
    dead: Arc<Mutex<Vec<DeadLetter>>>,
    counters: Arc<Counters>,
}

impl NearlineQueue {
    pub fn spawn(targets: NearlineTargets) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let dead = Arc::new(Mutex::new(Vec::new()));
        let counters = Arc::new(Counters::default());
        let worker = {
            let dead = Arc::clone(&dead);
            let counters = Arc::clone(&counters);
            std::thread::Builder::new()
                .name("nearline".into())
                .spawn(move || {
                    for job in rx {
                        let outcome = publish(&targets, &job.post).map_err(|e| {
                            let letter = DeadLetter {
                                post_id: job.post.post_id,
                                reason: e.to_string(),
                            };
                            tracing::warn!(post_id = %letter.post_id, reason = %letter.reason, "nearline dead letter");
                            dead.lock().push(letter.clone());
                            letter
                        });
                        counters.processed.fetch_add(1, Ordering::Release);
                        let _ = job.ack.send(outcome);
                    }
                })
                .expect("spawn nearline consumer")
        };
        NearlineQueue {
            tx: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
            dead,
            counters,
        }
    }

    /// Enqueues a post that is already durable in the corpus.
    pub fn submit(&self, post: Arc<Post>) -> Result<AckReceiver> {
        let (ack, rx) = mpsc::sync_channel(1);
        let tx = self.tx.lock();
        let tx = tx.as_ref().ok_or(Error::Uninitialized("nearline queue is shut down"))?;
        tx.send(Job { post, ack })
            .map_err(|_| Error::Uninitialized("nearline consumer stopped"))?;
        Ok(AckReceiver(rx))
    }

    pub fn processed(&self) -> u64 {
        self.counters.processed.load(Ordering::Acquire)
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.dead.lock().clone()
    }

    /// Drains the queue and stops the consumer.
    pub fn shutdown(&self) {
        self.tx.lock().take();
        if let Some(worker) = self.worker.lock().take() {
            let _ = worker.join();
        }
    }
}

impl Drop for NearlineQueue {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Computes and publishes one post. Each structure is updated under its own
/// write lock, so concurrent readers see the post either fully inserted or
/// absent.
pub fn publish(targets: &NearlineTargets, post: &Post) -> Result<Ack> {
    if targets.store.read().contains(post.post_id)
        || targets.ann.read().contains(post.post_id)
        || targets.tbr.read().contains(post.post_id)
    {
        return Err(Error::DuplicatePost(post.post_id));
    }
    let entry = {
        let directory = targets.directory.read();
        compute_entry(&targets.model, post, &directory, targets.embedder.as_ref(), targets.as_of)?
    };
    let post_vec = entry.post.clone();
    let store_version = {
        let mut store = targets.store.write();
        store.put(post.post_id, entry)?;
        store.version()
    };
    targets.ann.write().insert(post.post_id, &post_vec)?;
    targets.tbr.write().index_post(post)?;
    Ok(Ack {
        post_id: post.post_id,
        store_version,
    })
}
