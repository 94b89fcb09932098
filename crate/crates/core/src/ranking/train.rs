use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::RankFeatureVector;
use super::{HeadReport, RankingModel, Stage};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, MlpParams, SgdConfig};

/// One judged (query, post) pair with its features.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingExample {
    pub features: RankFeatureVector,
    pub on_topic: bool,
    pub long_dwell: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    #[serde(flatten)]
    pub sgd: SgdConfig,
}

impl HeadConfig {
    pub fn l1() -> Self {
        HeadConfig {
            hidden: vec![16],
            sgd: SgdConfig::default(),
        }
    }

    pub fn l2() -> Self {
        HeadConfig {
            hidden: vec![64, 32],
            sgd: SgdConfig::default(),
        }
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig::l2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingTrainReport {
    pub on_topicness: Option<HeadReport>,
    pub long_dwell: HeadReport,
}

fn check(inputs: &[Vec<f64>], labels: &[f64]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::invalid("training set", "no examples"));
    }
    if inputs.len() != labels.len() {
        return Err(Error::invalid("training set", "inputs and labels differ in length"));
    }
    if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid("training label", format!("{l} is outside [0, 1]")));
    }
    Ok(())
}

fn example_loss(head: &MlpParams, x: &[f64], label: f64, grads: Option<&mut MlpParams>) -> Result<f64> {
    let trace = head.forward_trace(x)?;
    let (loss, d) = bce_with_logit(trace.output()[0], label);
    if let Some(g) = grads {
        head.backward(&trace, &[d], g);
    }
    Ok(loss)
}

fn mean_loss(head: &MlpParams, inputs: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        total += example_loss(head, x, y, None)?;
    }
    Ok(total / inputs.len() as f64)
}

/// Mean BCE of a single-logit head and its gradient.
pub fn head_loss_and_gradient(head: &MlpParams, inputs: &[Vec<f64>], labels: &[f64]) -> Result<(f64, MlpParams)> {
    check(inputs, labels)?;
    let mut grads = head.zeros_like();
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        total += example_loss(head, x, y, Some(&mut grads))?;
    }
    let n = inputs.len() as f64;
    let scale = 1.0 / n;
    let mut mean_grads = head.zeros_like();
    mean_grads.descend(&grads, -scale);
    Ok((total / n, mean_grads))
}

/// Trains a fresh single-logit head with mini-batch SGD on BCE.
pub fn train_head(
    inputs: &[Vec<f64>],
    labels: &[f64],
    hidden: &[usize],
    sgd: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(MlpParams, HeadReport)> {
    check(inputs, labels)?;
    sgd.validate()?;
    let mut dims = vec![inputs[0].len()];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let mut head = MlpParams::init(&dims, rng)?;
    let initial_loss = mean_loss(&head, inputs, labels)?;
    let batch = sgd.effective_batch(inputs.len());
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grads = head.zeros_like();
    let mut epoch_losses = Vec::with_capacity(sgd.epochs);
    let mut step = 0;
    for epoch in 0..sgd.epochs {
        if batch < inputs.len() {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            grads.fill_zero();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += example_loss(&head, &inputs[i], labels[i], Some(&mut grads))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            head.descend(&grads, sgd.learning_rate / chunk.len() as f64);
            step += 1;
        }
        let loss = mean_loss(&head, inputs, labels)?;
        if !loss.is_finite() || !head.is_finite() {
            return Err(Error::Diverged { epoch, step, loss });
        }
        tracing::debug!(epoch, loss, "ranking head epoch");
        epoch_losses.push(loss);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
    Ok((
        head,
        HeadReport {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}

fn label(b: bool) -> f64 {
    b as u8 as f64
}

/// Trains the heads of one stage. L1 gets a long-dwell head over the
/// reduced features; L2 gets an on-topicness head and a full-feature
/// long-dwell head.
pub fn train_ranking_heads(
    examples: &[RankingExample],
    stage: Stage,
    config: &HeadConfig,
    alpha: f64,
    seed: u64,
) -> Result<(RankingModel, RankingTrainReport)> {
    if examples.is_empty() {
        return Err(Error::invalid("training set", "no examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dwell_labels: Vec<f64> = examples.iter().map(|e| label(e.long_dwell)).collect();
    let (on_topicness, on_report) = match stage {
        Stage::L1 => (None, None),
        Stage::L2 => {
            let inputs: Vec<Vec<f64>> = examples
                .iter()
                .map(|e| {
                    let mut v = e.features.query_text.as_slice().to_vec();
                    v.extend_from_slice(e.features.post_text.as_slice());
                    v
                })
                .collect();
            let labels: Vec<f64> = examples.iter().map(|e| label(e.on_topic)).collect();
            let (head, report) = train_head(&inputs, &labels, &config.hidden, &config.sgd, &mut rng)?;
            (Some(head), Some(report))
        }
    };
    let dwell_inputs: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| match stage {
            Stage::L1 => e.features.reduced_input(),
            Stage::L2 => e.features.full_input(),
        })
        .collect();
    let (long_dwell, dwell_report) = train_head(&dwell_inputs, &dwell_labels, &config.hidden, &config.sgd, &mut rng)?;
    let model = RankingModel::new(stage, on_topicness, long_dwell, alpha)?;
    Ok((
        model,
        RankingTrainReport {
            on_topicness: on_report,
            long_dwell: dwell_report,
        },
    ))
}
