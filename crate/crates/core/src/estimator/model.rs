//! Trainable patch estimator and the implicit stability classifier.
//!
//! Both share the same architecture: pooled, standardized signals feed two
//! tanh layers of 256 units and a logistic output layer. The patch model has
//! one output per grid cell; the implicit model has a single output. Training
//! is minibatch SGD with a fixed step on mean binary cross-entropy.
//!
//! Model files are text: a JSON header line followed by the flat parameter
//! vector, one decimal number per line.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureEncoder, Modality, ENCODER_KIND};
use super::network::{sigmoid, Mlp};
use super::{EstimatorError, PatchEstimate};
use crate::dataset::Sample;
use crate::geometry::GridSpec;
use crate::sensor_sim::ProbeObservation;

pub const MODEL_SCHEMA: &str = "tacstack-model";
pub const MODEL_VERSION: u32 = 1;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub modality: Modality,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Principal components kept by the encoder; 0 disables the projection.
    pub components: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modality: Modality::FtTac,
            hidden_layers: 2,
            hidden_units: 256,
            learning_rate: 1.0,
            epochs: 30,
            batch_size: 32,
            components: 6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    fn validate(&self) -> Result<(), EstimatorError> {
        if self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(EstimatorError::Config("network needs at least one hidden unit and layer".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(EstimatorError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(EstimatorError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelTarget {
    /// Per-cell contact probabilities on the given grasped-frame grid.
    Patch { grid: GridSpec },
    /// A single stability probability.
    Stability,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub target: ModelTarget,
    pub encoder: FeatureEncoder,
    pub net: Mlp,
    /// Mean training BCE of each epoch.
    pub loss_history: Vec<f64>,
    /// Hash of the run configuration that produced the model, when known.
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    schema: String,
    version: u32,
    encoder_kind: String,
    config: ModelConfig,
    target: ModelTarget,
    encoder: FeatureEncoder,
    layer_sizes: Vec<usize>,
    loss_history: Vec<f64>,
    n_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Train a patch estimator. All samples must share one grasped shape grid.
pub fn train(samples: &[Sample], config: &ModelConfig) -> Result<TrainedModel, EstimatorError> {
    let first = samples
        .first()
        .ok_or_else(|| EstimatorError::Input("empty training set".into()))?;
    let grid = first.truth.grid;
    if let Some(s) = samples
        .iter()
        .find(|s| s.pair_id.top != first.pair_id.top || !s.truth.grid.approx_eq(&grid))
    {
        return Err(EstimatorError::Input(format!(
            "training set mixes grasped objects {} and {}",
            first.pair_id.top, s.pair_id.top
        )));
    }
    let targets: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.truth.contact.iter().map(|&c| c as u8 as f64).collect())
        .collect();
    fit(samples, targets, ModelTarget::Patch { grid }, config)
}

/// Train the single-output stability classifier on the `stable` labels.
pub fn train_implicit(samples: &[Sample], config: &ModelConfig) -> Result<TrainedModel, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::Input("empty training set".into()));
    }
    let targets = samples
        .iter()
        .map(|s| vec![s.stable as u8 as f64])
        .collect();
    fit(samples, targets, ModelTarget::Stability, config)
}

fn fit(
    samples: &[Sample],
    targets: Vec<Vec<f64>>,
    target: ModelTarget,
    config: &ModelConfig,
) -> Result<TrainedModel, EstimatorError> {
    config.validate()?;
    let encoder = FeatureEncoder::fit(config.modality, samples.iter().map(|s| &s.obs), config.components)?;
    let n = samples.len();
    let d = encoder.dim();
    let out = targets[0].len();

    let mut x = Array2::<f64>::zeros((n, d));
    for (i, s) in samples.iter().enumerate() {
        let f = encoder.encode(&s.obs)?;
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&f));
    }
    let mut y = Array2::<f64>::zeros((n, out));
    for (i, t) in targets.iter().enumerate() {
        y.row_mut(i).assign(&ndarray::ArrayView1::from(t));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sizes = vec![d];
    sizes.extend(std::iter::repeat_n(config.hidden_units, config.hidden_layers));
    sizes.push(out);
    let mut net = Mlp::new(&sizes, &mut rng);
    // Start every output at the training-set log-odds of its label.
    let last = net.layers.last_mut().unwrap();
    for j in 0..out {
        let rate = y.column(j).mean().unwrap_or(0.5).clamp(1e-3, 1.0 - 1e-3);
        last.b[j] = (rate / (1.0 - rate)).ln();
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let bs = config.batch_size.min(n);
    let mut xb = Array2::<f64>::zeros((bs, d));
    let mut yb = Array2::<f64>::zeros((bs, out));
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let (xv, yv) = if chunk.len() == bs {
                for (r, &i) in chunk.iter().enumerate() {
                    xb.row_mut(r).assign(&x.row(i));
                    yb.row_mut(r).assign(&y.row(i));
                }
                (xb.view(), yb.view())
            } else {
                // ragged final batch
                let xs = x.select(ndarray::Axis(0), chunk);
                let ys = y.select(ndarray::Axis(0), chunk);
                let (loss, grads) = net.loss_and_grad(xs.view(), ys.view());
                if !loss.is_finite() {
                    return Err(EstimatorError::NumericFailure {
                        epoch,
                        learning_rate: config.learning_rate,
                    });
                }
                total += loss * chunk.len() as f64;
                net.sgd_step(&grads, config.learning_rate);
                continue;
            };
            let (loss, grads) = net.loss_and_grad(xv, yv);
            if !loss.is_finite() {
                return Err(EstimatorError::NumericFailure {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            total += loss * chunk.len() as f64;
            net.sgd_step(&grads, config.learning_rate);
        }
        let mean = total / n as f64;
        if !mean.is_finite() || net.flatten().iter().any(|p| !p.is_finite()) {
            return Err(EstimatorError::NumericFailure {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        loss_history.push(mean);
    }
    Ok(TrainedModel {
        config: config.clone(),
        target,
        encoder,
        net,
        loss_history,
        config_hash: None,
    })
}

impl TrainedModel {
    fn probabilities(&self, observations: &[&ProbeObservation]) -> Result<Array2<f64>, EstimatorError> {
        let d = self.encoder.dim();
        let mut x = Array2::<f64>::zeros((observations.len(), d));
        for (i, obs) in observations.iter().enumerate() {
            let f = self.encoder.encode(obs)?;
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&f));
        }
        let mut z = self.net.forward(x.view());
        z.mapv_inplace(|v| sigmoid(v).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
        Ok(z)
    }

    /// Patch estimates for a batch of observations.
    pub fn predict_many(&self, observations: &[&ProbeObservation]) -> Result<Vec<PatchEstimate>, EstimatorError> {
        let ModelTarget::Patch { grid } = self.target else {
            return Err(EstimatorError::Input("model predicts stability, not a patch".into()));
        };
        let p = self.probabilities(observations)?;
        Ok(p.rows()
            .into_iter()
            .map(|row| PatchEstimate {
                grid,
                probs: row.to_vec(),
            })
            .collect())
    }

    pub fn stability_many(&self, observations: &[&ProbeObservation]) -> Result<Vec<f64>, EstimatorError> {
        if self.target != ModelTarget::Stability {
            return Err(EstimatorError::Input("model predicts a patch, not stability".into()));
        }
        Ok(self.probabilities(observations)?.column(0).to_vec())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EstimatorError> {
        let params = self.net.flatten();
        let header = ModelHeader {
            schema: MODEL_SCHEMA.into(),
            version: MODEL_VERSION,
            encoder_kind: match &self.encoder.projection {
                Some(p) => format!("{ENCODER_KIND}+pca({})+mlp(tanh)", p.components.len()),
                None => format!("{ENCODER_KIND}+mlp(tanh)"),
            },
            config: self.config.clone(),
            target: self.target.clone(),
            encoder: self.encoder.clone(),
            layer_sizes: self.net.sizes(),
            loss_history: self.loss_history.clone(),
            n_params: params.len(),
            config_hash: self.config_hash.clone(),
        };
        serde_json::to_writer(&mut w, &header).map_err(|e| EstimatorError::ModelFile(e.to_string()))?;
        writeln!(w)?;
        for p in params {
            writeln!(w, "{p}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, EstimatorError> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| EstimatorError::ModelFile("missing header".into()))??;
        let header: ModelHeader = serde_json::from_str(&header_line)
            .map_err(|e| EstimatorError::ModelFile(format!("bad header: {e}")))?;
        if header.schema != MODEL_SCHEMA || header.version != MODEL_VERSION {
            return Err(EstimatorError::ModelFile(format!(
                "schema mismatch: expected {MODEL_SCHEMA} v{MODEL_VERSION}, found {} v{}",
                header.schema, header.version
            )));
        }
        let mut params = Vec::with_capacity(header.n_params);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| EstimatorError::ModelFile(format!("line {}: not a number", k + 2)))?;
            params.push(v);
        }
        if params.len() != header.n_params {
            return Err(EstimatorError::ModelFile(format!(
                "expected {} parameters, found {}",
                header.n_params,
                params.len()
            )));
        }
        let net = Mlp::from_flat(&header.layer_sizes, &params)
            .ok_or_else(|| EstimatorError::ModelFile("parameter count does not match layer sizes".into()))?;
        if net.input_dim() != header.encoder.dim() {
            return Err(EstimatorError::ModelFile("encoder and network disagree on input size".into()));
        }
        Ok(Self {
            config: header.config,
            target: header.target,
            encoder: header.encoder,
            net,
            loss_history: header.loss_history,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EstimatorError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, EstimatorError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn predict(model: &TrainedModel, obs: &ProbeObservation) -> Result<PatchEstimate, EstimatorError> {
    Ok(model.predict_many(&[obs])?.remove(0))
}

/// Probability that the configuration is stable; the verdict is `p >= 0.5`.
pub fn implicit_stability(model: &TrainedModel, obs: &ProbeObservation) -> Result<f64, EstimatorError> {
    Ok(model.stability_many(&[obs])?[0])
}
