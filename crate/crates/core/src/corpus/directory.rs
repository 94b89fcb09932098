use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{Author, MemberId, Searcher};
use crate::error::{Error, LineError, Result};

/// One line of a member file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DirectoryRecord {
    Author(Author),
    Searcher(Searcher),
}

/// Author and searcher profiles keyed by member id.
#[derive(Debug, Clone, Default)]
pub struct MemberDirectory {
    authors: BTreeMap<MemberId, Author>,
    searchers: BTreeMap<MemberId, Searcher>,
}

impl MemberDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load<R: BufRead>(source: R) -> Result<Self> {
        let mut dir = MemberDirectory::new();
        let mut errors = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<DirectoryRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(|rec| dir.insert(rec).map_err(|e| e.to_string()));
            if let Err(message) = outcome {
                errors.push(LineError { line: i + 1, message });
            }
        }
        if errors.is_empty() {
            Ok(dir)
        } else {
            Err(Error::Lines(errors))
        }
    }

    pub fn insert(&mut self, record: DirectoryRecord) -> Result<()> {
        match record {
            DirectoryRecord::Author(a) => {
                a.validate()?;
                self.authors.insert(a.author_id, a);
            }
            DirectoryRecord::Searcher(s) => {
                s.validate()?;
                self.searchers.insert(s.searcher_id, s);
            }
        }
        Ok(())
    }

    pub fn author(&self, id: MemberId) -> Option<&Author> {
        self.authors.get(&id)
    }

    pub fn searcher(&self, id: MemberId) -> Option<&Searcher> {
        self.searchers.get(&id)
    }

    /// The directory profile, or an unknown author with zero popularity.
    pub fn author_or_default(&self, id: MemberId) -> Author {
        self.author(id).cloned().unwrap_or_else(|| Author::unknown(id))
    }

    pub fn searcher_or_anonymous(&self, id: MemberId) -> Searcher {
        self.searcher(id).cloned().unwrap_or_else(|| Searcher::anonymous(id))
    }

    pub fn records(&self) -> impl Iterator<Item = DirectoryRecord> + '_ {
        self.authors
            .values()
            .cloned()
            .map(DirectoryRecord::Author)
            .chain(self.searchers.values().cloned().map(DirectoryRecord::Searcher))
    }

    pub fn author_count(&self) -> usize {
        self.authors.len()
    }

    pub fn searcher_count(&self) -> usize {
        self.searchers.len()
    }
}
