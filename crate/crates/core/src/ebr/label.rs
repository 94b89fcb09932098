use serde::{Deserialize, Serialize};

use crate::corpus::{DwellThresholds, PostType};
use crate::error::{Error, Result};

/// Weights of the on-topic and long-dwell components in the retrieval label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub on_topic: f64,
    pub long_dwell: f64,
}

impl Default for LabelWeights {
    fn default() -> Self {
        LabelWeights {
            on_topic: 0.5,
            long_dwell: 0.5,
        }
    }
}

impl LabelWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.on_topic >= 0.0 && self.long_dwell >= 0.0 && (self.on_topic + self.long_dwell - 1.0).abs() < 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("label weights", "must be non-negative and sum to 1"))
        }
    }
}

/// Combines the binary on-topic label with the binary long-dwell label
/// (`dwell > N(post_type)`) into a training target in `[0, 1]`.
pub fn aggregate_label(
    on_topic: bool,
    dwell_seconds: f64,
    post_type: PostType,
    thresholds: &DwellThresholds,
    weights: &LabelWeights,
) -> Result<f64> {
    if dwell_seconds.is_nan() || dwell_seconds < 0.0 {
        return Err(Error::invalid("dwell_seconds", format!("must be >= 0, got {dwell_seconds}")));
    }
    let long = thresholds.is_long_dwell(post_type, dwell_seconds)?;
    Ok(weights.on_topic * on_topic as u8 as f64 + weights.long_dwell * long as u8 as f64)
}
