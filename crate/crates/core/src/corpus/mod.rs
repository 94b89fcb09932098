//! Corpus entities and their durable storage.
//!
//! Posts live in an append-only log ([`PostStore`]); authors and searchers in
//! a small [`MemberDirectory`]; historical serving data is loaded as
//! [`InteractionRecord`]s.

mod directory;
mod dwell;
mod interactions;
mod store;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use directory::{DirectoryRecord, MemberDirectory};
pub use dwell::DwellThresholds;
pub use interactions::{load_interactions, InteractionLine};
pub use store::{IngestReport, PostStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PostId(pub u64);

impl fmt::Display for PostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Identifier shared by authors and searchers; a member can be both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemberId(pub u64);

impl fmt::Display for MemberId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostType {
    Text,
    Article,
    Video,
}

impl PostType {
    pub const ALL: [PostType; 3] = [PostType::Text, PostType::Article, PostType::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            PostType::Text => "text",
            PostType::Article => "article",
            PostType::Video => "video",
        }
    }
}

impl std::str::FromStr for PostType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(PostType::Text),
            "article" => Ok(PostType::Article),
            "video" => Ok(PostType::Video),
            other => Err(Error::invalid("post_type", format!("unknown type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: PostId,
    pub text: String,
    pub post_type: PostType,
    pub author_id: MemberId,
    /// Epoch seconds.
    pub created_at: i64,
    /// Pre-normalized to `[0, 1]`.
    pub popularity: f64,
}

impl Post {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid("post", format!("post {} has empty text", self.post_id)));
        }
        check_unit_interval("post popularity", self.popularity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub searcher_id: MemberId,
    #[serde(default)]
    pub contains_job_title: bool,
    #[serde(default)]
    pub issued_at: i64,
}

impl Query {
    pub fn new(text: impl Into<String>, searcher_id: MemberId) -> Self {
        Query {
            text: text.into(),
            searcher_id,
            contains_job_title: false,
            issued_at: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid("query", "query text is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Searcher {
    pub searcher_id: MemberId,
    #[serde(default)]
    pub job_seeking_intent: bool,
    /// Authors the searcher is connected to.
    #[serde(default)]
    pub connections: BTreeSet<MemberId>,
}

impl Searcher {
    /// A searcher with no known features.
    pub fn anonymous(searcher_id: MemberId) -> Self {
        Searcher {
            searcher_id,
            ..Default::default()
        }
    }

    pub fn is_connected_to(&self, author: MemberId) -> bool {
        self.connections.contains(&author)
    }

    pub fn validate(&self) -> Result<()> {
        if self.connections.contains(&self.searcher_id) {
            return Err(Error::invalid(
                "searcher",
                format!("searcher {} lists itself as a connection", self.searcher_id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Author {
    pub author_id: MemberId,
    pub popularity: f64,
}

impl Author {
    /// Stand-in for authors missing from the directory.
    pub fn unknown(author_id: MemberId) -> Self {
        Author {
            author_id,
            popularity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("author popularity", self.popularity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub query: Query,
    pub post_id: PostId,
    pub dwell_seconds: f64,
    pub on_topic: bool,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_seconds >= 0.0 && self.dwell_seconds.is_finite()) {
            return Err(Error::invalid(
                "interaction",
                format!("dwell_seconds must be a finite value >= 0, got {}", self.dwell_seconds),
            ));
        }
        self.query.validate()
    }
}

fn check_unit_interval(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("{value} is outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: u64) -> Post {
        Post {
            post_id: PostId(id),
            text: "hello".into(),
            post_type: PostType::Text,
            author_id: MemberId(1),
            created_at: 0,
            popularity: 0.5,
        }
    }

    #[test]
    fn post_validation() {
        assert!(post(1).validate().is_ok());
        let mut p = post(1);
        p.text = "   ".into();
        assert!(p.validate().is_err());
        let mut p = post(1);
        p.popularity = 1.5;
        assert!(p.validate().is_err());
        p.popularity = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn searcher_cannot_connect_to_self() {
        let mut s = Searcher::anonymous(MemberId(4));
        s.connections.insert(MemberId(5));
        assert!(s.validate().is_ok());
        s.connections.insert(MemberId(4));
        assert!(s.validate().is_err());
    }

    #[test]
    fn post_type_wire_names() {
        for t in PostType::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
            assert_eq!(t.as_str().parse::<PostType>().unwrap(), t);
        }
        assert!("podcast".parse::<PostType>().is_err());
    }
}
