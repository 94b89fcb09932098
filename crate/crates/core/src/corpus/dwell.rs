use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PostType;
use crate::error::{Error, Result};

/// Per-post-type dwell threshold N in seconds; a dwell counts as long only
/// when strictly greater than N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DwellThresholds(BTreeMap<PostType, f64>);

impl Default for DwellThresholds {
    fn default() -> Self {
        DwellThresholds(BTreeMap::from([
            (PostType::Text, 10.0),
            (PostType::Article, 20.0),
            (PostType::Video, 30.0),
        ]))
    }
}

impl DwellThresholds {
    pub fn new(entries: impl IntoIterator<Item = (PostType, f64)>) -> Result<Self> {
        let map: BTreeMap<_, _> = entries.into_iter().collect();
        if let Some((t, n)) = map.iter().find(|(_, n)| !(n.is_finite() && **n >= 0.0)) {
            return Err(Error::invalid("dwell threshold", format!("{}: {n}", t.as_str())));
        }
        Ok(DwellThresholds(map))
    }

    pub fn get(&self, post_type: PostType) -> Result<f64> {
        self.0
            .get(&post_type)
            .copied()
            .ok_or_else(|| Error::invalid("post_type", format!("no dwell threshold for {}", post_type.as_str())))
    }

    pub fn is_long_dwell(&self, post_type: PostType, dwell_seconds: f64) -> Result<bool> {
        Ok(dwell_seconds > self.get(post_type)?)
    }
}
