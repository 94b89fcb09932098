use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{PostSideFeatures, QuerySideFeatures};
use super::two_tower::TwoTowerModel;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logit, MlpParams, SgdConfig, Trace};
use crate::text::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub query: QuerySideFeatures,
    pub post: PostSideFeatures,
    /// Aggregated label in `[0, 1]`.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(flatten)]
    pub sgd: SgdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64],
            output_dim: 32,
            sgd: SgdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Mean loss over the full training set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Gradient buffers shaped like a [`TwoTowerModel`].
#[derive(Debug, Clone)]
pub struct TwoTowerGrads {
    pub query: MlpParams,
    pub post: MlpParams,
    pub temperature: f64,
    pub offset: f64,
}

impl TwoTowerGrads {
    pub fn zeros_like(model: &TwoTowerModel) -> Self {
        TwoTowerGrads {
            query: model.query_tower.zeros_like(),
            post: model.post_tower.zeros_like(),
            temperature: 0.0,
            offset: 0.0,
        }
    }

    fn clear(&mut self) {
        self.query.fill_zero();
        self.post.fill_zero();
        self.temperature = 0.0;
        self.offset = 0.0;
    }
}

struct Prepared {
    query: Vec<f64>,
    post: Vec<f64>,
    label: f64,
}

fn prepare(examples: &[TrainingExample]) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            if !(0.0..=1.0).contains(&ex.label) {
                return Err(Error::invalid("training label", format!("{} is outside [0, 1]", ex.label)));
            }
            Ok(Prepared {
                query: ex.query.to_input(),
                post: ex.post.to_input(),
                label: ex.label,
            })
        })
        .collect()
}

/// Unit-normalized tower output and the backprop trace that produced it.
fn normalized(tower: &MlpParams, input: &[f64]) -> Result<(Trace, Vec<f64>, f64)> {
    let trace = tower.forward_trace(input)?;
    let y = trace.output();
    let norm = dot(y, y).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::invalid("tower output", "cannot normalize"));
    }
    let e = y.iter().map(|v| v / norm).collect();
    Ok((trace, e, norm))
}

/// d/dy of a loss on `e = y / |y|`, given `g = d loss / d e`.
fn through_normalization(e: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let eg = dot(e, g);
    e.iter().zip(g).map(|(ei, gi)| (gi - ei * eg) / norm).collect()
}

/// BCE of one pair; accumulates its gradient into `grads` when given.
fn pair_loss(model: &TwoTowerModel, ex: &Prepared, grads: Option<&mut TwoTowerGrads>) -> Result<f64> {
    let (q_trace, qe, q_norm) = normalized(&model.query_tower, &ex.query)?;
    let (p_trace, pe, p_norm) = normalized(&model.post_tower, &ex.post)?;
    let cos = dot(&qe, &pe);
    let logit = model.temperature * cos + model.offset;
    let (loss, d_logit) = bce_with_logit(logit, ex.label);
    if let Some(g) = grads {
        g.temperature += d_logit * cos;
        g.offset += d_logit;
        let d_cos = d_logit * model.temperature;
        let g_qe: Vec<f64> = pe.iter().map(|v| d_cos * v).collect();
        let g_pe: Vec<f64> = qe.iter().map(|v| d_cos * v).collect();
        model
            .query_tower
            .backward(&q_trace, &through_normalization(&qe, q_norm, &g_qe), &mut g.query);
        model
            .post_tower
            .backward(&p_trace, &through_normalization(&pe, p_norm, &g_pe), &mut g.post);
    }
    Ok(loss)
}

fn mean_loss(model: &TwoTowerModel, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for ex in data {
        total += pair_loss(model, ex, None)?;
    }
    Ok(total / data.len() as f64)
}

/// Mean loss over `examples` and its gradient with respect to every
/// parameter (both towers, temperature, offset).
pub fn loss_and_gradient(model: &TwoTowerModel, examples: &[TrainingExample]) -> Result<(f64, TwoTowerGrads)> {
    let data = prepare(examples)?;
    let mut grads = TwoTowerGrads::zeros_like(model);
    let mut total = 0.0;
    for ex in &data {
        total += pair_loss(model, ex, Some(&mut grads))?;
    }
    let n = data.len() as f64;
    scale(&mut grads, 1.0 / n);
    Ok((total / n, grads))
}

fn scale(g: &mut TwoTowerGrads, s: f64) {
    for m in [&mut g.query, &mut g.post] {
        for l in m.layers_mut() {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }
    g.temperature *= s;
    g.offset *= s;
}

pub fn mean_loss_of(model: &TwoTowerModel, examples: &[TrainingExample]) -> Result<f64> {
    mean_loss(model, &prepare(examples)?)
}

/// Trains both towers with mini-batch gradient descent on pointwise BCE
/// between `sigmoid(temperature * cos + offset)` and the label.
pub fn train_two_tower(
    examples: &[TrainingExample],
    config: &TrainConfig,
    seed: u64,
) -> Result<(TwoTowerModel, TrainReport)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::invalid("training set", "no examples"))?;
    config.sgd.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = TwoTowerModel::init(first.query.text.dim(), &config.hidden, config.output_dim, &mut rng)?;
    train_from(model, examples, &config.sgd, &mut rng)
}

/// Continues training an existing model.
pub fn train_from(
    mut model: TwoTowerModel,
    examples: &[TrainingExample],
    sgd: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TwoTowerModel, TrainReport)> {
    let data = prepare(examples)?;
    let initial_loss = mean_loss(&model, &data)?;
    let batch = sgd.effective_batch(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = TwoTowerGrads::zeros_like(&model);
    let mut epoch_losses = Vec::with_capacity(sgd.epochs);
    let mut step = 0;
    for epoch in 0..sgd.epochs {
        if batch < data.len() {
            order.shuffle(rng);
        }
        for chunk in order.chunks(batch) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += pair_loss(&model, &data[i], Some(&mut grads)).map_err(|e| match e {
                    Error::Invalid { what: "tower output", .. } => Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    },
                    e => e,
                })?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            let lr = sgd.learning_rate / chunk.len() as f64;
            model.query_tower.descend(&grads.query, lr);
            model.post_tower.descend(&grads.post, lr);
            model.temperature -= lr * grads.temperature;
            model.offset -= lr * grads.offset;
            step += 1;
        }
        let loss = mean_loss(&model, &data)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, step, loss });
        }
        tracing::debug!(epoch, loss, "two-tower epoch");
        epoch_losses.push(loss);
    }
    let final_loss = *epoch_losses.last().expect("at least one epoch");
    Ok((
        model,
        TrainReport {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}
