use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{InteractionRecord, MemberId, PostId, PostStore, Query};
use crate::error::{Error, LineError, Result};

/// Wire form of one historical serving record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLine {
    pub query_text: String,
    pub searcher_id: MemberId,
    pub post_id: PostId,
    pub dwell_seconds: f64,
    /// 0 or 1.
    pub on_topic: u8,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub contains_job_title: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub issued_at: i64,
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

impl InteractionLine {
    pub fn into_record(self) -> Result<InteractionRecord> {
        let on_topic = match self.on_topic {
            0 => false,
            1 => true,
            other => {
                return Err(Error::invalid("interaction", format!("on_topic must be 0 or 1, got {other}")))
            }
        };
        let record = InteractionRecord {
            query: Query {
                text: self.query_text,
                searcher_id: self.searcher_id,
                contains_job_title: self.contains_job_title,
                issued_at: self.issued_at,
            },
            post_id: self.post_id,
            dwell_seconds: self.dwell_seconds,
            on_topic,
        };
        record.validate()?;
        Ok(record)
    }
}

impl From<&InteractionRecord> for InteractionLine {
    fn from(r: &InteractionRecord) -> Self {
        InteractionLine {
            query_text: r.query.text.clone(),
            searcher_id: r.query.searcher_id,
            post_id: r.post_id,
            dwell_seconds: r.dwell_seconds,
            on_topic: r.on_topic as u8,
            contains_job_title: r.query.contains_job_title,
            issued_at: r.query.issued_at,
        }
    }
}

/// Reads interaction records in file order. Every line must parse, satisfy
/// the record invariants, and reference a post present in `posts`;
/// otherwise all offending lines are returned together.
pub fn load_interactions<R: BufRead>(source: R, posts: &PostStore) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str::<InteractionLine>(&line)
            .map_err(|e| e.to_string())
            .and_then(|l| l.into_record().map_err(|e| e.to_string()))
            .and_then(|r| {
                if posts.contains(r.post_id) {
                    Ok(r)
                } else {
                    Err(format!("dangling post_id {}", r.post_id))
                }
            });
        match outcome {
            Ok(r) => records.push(r),
            Err(message) => errors.push(LineError { line: i + 1, message }),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(Error::Lines(errors))
    }
}
