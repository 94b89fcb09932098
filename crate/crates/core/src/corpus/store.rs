use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::{Post, PostId};
use crate::error::{Error, LineError, Result};

/// Outcome of streaming a batch of posts into the store.
#[derive(Debug, Default, Clone, Serialize)]
pub struct IngestReport {
    pub stored: usize,
    #[serde(skip)]
    pub errors: Vec<LineError>,
}

/// Append-only post log with an in-memory id index.
///
/// Writers are serialized through `log`; a post becomes visible to readers
/// only after its log line is written, and it is inserted into the index as
/// one `Arc`, so readers never see a partial post.
pub struct PostStore {
    path: Option<PathBuf>,
    log: Mutex<Option<File>>,
    posts: RwLock<BTreeMap<PostId, Arc<Post>>>,
}

impl PostStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        PostStore {
            path: None,
            log: Mutex::new(None),
            posts: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (or creates) the log at `path` and rebuilds the index from it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut posts = BTreeMap::new();
        if path.exists() {
            let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut errors = Vec::new();
            let mut offset = 0;
            let mut keep = raw.len();
            for (i, line) in raw.split_inclusive('\n').enumerate() {
                let line_start = offset;
                offset += line.len();
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Post>(line) {
                    Ok(post) => {
                        posts.insert(post.post_id, Arc::new(post));
                    }
                    // A torn final record from an interrupted append.
                    Err(e) if !line.ends_with('\n') => {
                        tracing::warn!(path = %path.display(), "dropping torn trailing record: {e}");
                        keep = line_start;
                    }
                    Err(e) => errors.push(LineError {
                        line: i + 1,
                        message: e.to_string(),
                    }),
                }
            }
            if !errors.is_empty() {
                return Err(Error::Lines(errors));
            }
            if keep < raw.len() {
                let file = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                file.set_len(keep as u64).map_err(|e| Error::io(&path, e))?;
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(PostStore {
            path: Some(path),
            log: Mutex::new(Some(file)),
            posts: RwLock::new(posts),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.posts.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.read().is_empty()
    }

    pub fn contains(&self, id: PostId) -> bool {
        self.posts.read().contains_key(&id)
    }

    pub fn get_post(&self, id: PostId) -> Result<Arc<Post>> {
        self.posts
            .read()
            .get(&id)
            .cloned()
            .ok_or(Error::PostNotFound(id))
    }

    /// All posts in ascending id order.
    pub fn posts(&self) -> Vec<Arc<Post>> {
        self.posts.read().values().cloned().collect()
    }

    /// Validates, logs, and indexes a single post.
    pub fn insert(&self, post: Post) -> Result<Arc<Post>> {
        let mut log = self.log.lock();
        let post = self.append_locked(&mut log, post)?;
        if let Some(file) = log.as_mut() {
            file.sync_data().map_err(|e| self.io_err(e))?;
        }
        Ok(post)
    }

    /// Streams line-delimited JSON posts into the store. Bad or duplicate
    /// lines are reported and skipped; the rest of the stream continues.
    pub fn ingest_posts<R: BufRead>(&self, source: R) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        let mut log = self.log.lock();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<Post>(&line)
                .map_err(|e| e.to_string())
                .and_then(|post| self.append_locked(&mut log, post).map_err(|e| e.to_string()));
            match outcome {
                Ok(_) => report.stored += 1,
                Err(message) => report.errors.push(LineError { line: i + 1, message }),
            }
        }
        if let Some(file) = log.as_mut() {
            file.sync_data().map_err(|e| self.io_err(e))?;
        }
        Ok(report)
    }

    fn append_locked(&self, log: &mut Option<File>, post: Post) -> Result<Arc<Post>> {
        post.validate()?;
        if self.posts.read().contains_key(&post.post_id) {
            return Err(Error::DuplicatePost(post.post_id));
        }
        if let Some(file) = log.as_mut() {
            let mut line = serde_json::to_vec(&post).expect("post serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| self.io_err(e))?;
        }
        let post = Arc::new(post);
        self.posts.write().insert(post.post_id, Arc::clone(&post));
        Ok(post)
    }

    fn io_err(&self, e: std::io::Error) -> Error {
        match &self.path {
            Some(p) => Error::io(p, e),
            None => Error::Stream(e),
        }
    }
}
