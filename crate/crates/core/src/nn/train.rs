use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Network};
use super::{ModelCheckpoint, ModelSpec, Provenance};
use crate::data::LabeledDataset;
use crate::error::{ensure, Error, Result};
use crate::fingerprint::fingerprint_debug;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

/// Minibatch training hyperparameters. The learning rate at epoch `e` is
/// `learning_rate / (1 + lr_decay * e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 40, batch_size: 32, learning_rate: 0.01, lr_decay: 0.0, optimizer: Optimizer::Adam, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self, n: usize) -> Result<()> {
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.batch_size <= n, "batch_size {} exceeds dataset size {n}", self.batch_size);
        ensure!(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning_rate must be nonnegative");
        ensure!(self.lr_decay >= 0.0 && self.lr_decay.is_finite(), "lr_decay must be nonnegative");
        Ok(())
    }

    /// Same config with the batch size capped at `n`.
    pub fn fitted_to(&self, n: usize) -> Self {
        Self { batch_size: self.batch_size.min(n.max(1)), ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    let mut params = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut params[layer.weight_offset..layer.bias_offset] {
            *w = rng.random_range(-limit..=limit);
        }
    }
    params
}

pub(crate) enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 },
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Runs one pass of shuffled minibatches. Returns the mean batch loss.
pub(crate) fn run_epoch<R: Rng>(
    spec: &ModelSpec,
    layout: &[super::LayerLayout],
    params: &mut [f64],
    dataset: &LabeledDataset,
    order: &mut [usize],
    batch_size: usize,
    lr: f64,
    opt: &mut OptimizerState,
    rng: &mut R,
    epoch: usize,
) -> Result<f64> {
    order.shuffle(rng);
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / chunk.len() as f64;
        let net = Network { spec, layout, params };
        let mut loss = 0.0;
        for &i in chunk {
            loss += net.backprop(dataset.row(i), dataset.labels()[i], Some((&mut grad, scale)), None);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch, detail: format!("non-finite loss {loss}") });
        }
        total += loss;
        opt.step(params, &grad, lr);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged { epoch, detail: "non-finite parameter after update".into() });
    }
    Ok(total / dataset.len() as f64)
}

fn check_dataset(spec: &ModelSpec, dataset: &LabeledDataset) -> Result<()> {
    ensure!(!dataset.is_empty(), "cannot train on an empty dataset");
    ensure!(dataset.dim() == spec.input_dim, "dataset dim {} != model input dim {}", dataset.dim(), spec.input_dim);
    ensure!(
        dataset.labels().iter().all(|&y| y < spec.num_classes),
        "dataset labels exceed the model's {} classes",
        spec.num_classes
    );
    Ok(())
}

/// Trains from a fresh initialisation drawn from `RngStream::new(cfg.seed, 0)`.
pub fn train(spec: &ModelSpec, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    train_with_stream(spec, dataset, cfg, RngStream::new(cfg.seed, 0))
}

/// Trains with all randomness (initialisation and shuffling) drawn from children of `stream`.
pub fn train_with_stream(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<ModelCheckpoint> {
    spec.validate()?;
    check_dataset(spec, dataset)?;
    cfg.validate(dataset.len())?;
    let layout = spec.layers();
    let mut params = init_params(spec, stream.child(0));
    let mut opt = OptimizerState::new(cfg.optimizer, params.len());
    let mut rng = stream.child(1).rng();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        run_epoch(spec, &layout, &mut params, dataset, &mut order, cfg.batch_size, lr, &mut opt, &mut rng, epoch)?;
    }
    let provenance = Provenance {
        seed: stream.seed,
        stream_id: stream.stream_id,
        dataset_fingerprint: dataset.fingerprint(),
        config_fingerprint: fingerprint_debug(cfg),
    };
    ModelCheckpoint::new(spec.clone(), params, provenance)
}

/// Fine-tuning schedule: plain SGD at a fixed rate until the full-dataset
/// training loss fails to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub patience: usize,
    /// Hard cap on epochs in case the loss keeps creeping down.
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, patience: 3, max_epochs: 100, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneReport {
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub best_loss: f64,
}

/// Continues training `model` on `dataset` (never reinitialising).
pub fn fine_tune(
    model: &ModelCheckpoint,
    dataset: &LabeledDataset,
    cfg: &FineTuneConfig,
) -> Result<(ModelCheckpoint, FineTuneReport)> {
    let spec = model.spec();
    check_dataset(spec, dataset)?;
    ensure!(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite(), "fine-tune learning rate must be nonnegative");
    ensure!(cfg.patience > 0, "patience must be positive");
    let batch = cfg.batch_size.min(dataset.len()).max(1);
    let layout = spec.layers();
    let mut params = model.params().to_vec();
    let mut opt = OptimizerState::new(Optimizer::Sgd, params.len());
    let mut rng = RngStream::new(cfg.seed, 0x6674).rng();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let rows = dataset.all_rows();

    let full_loss = |params: &[f64]| -> f64 {
        let net = Network { spec, layout: &layout, params };
        rows.iter().zip(dataset.labels()).map(|(x, &y)| net.loss(x, y)).sum::<f64>() / rows.len() as f64
    };
    let initial = full_loss(&params);
    let mut best = initial;
    let mut stale = 0;
    let mut epochs_run = 0;
    while stale < cfg.patience && epochs_run < cfg.max_epochs {
        run_epoch(spec, &layout, &mut params, dataset, &mut order, batch, cfg.learning_rate, &mut opt, &mut rng, epochs_run)?;
        epochs_run += 1;
        let loss = full_loss(&params);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: epochs_run - 1, detail: "non-finite fine-tune loss".into() });
        }
        if loss < best {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let provenance = Provenance {
        config_fingerprint: fingerprint_debug(&(model.provenance().config_fingerprint.as_str(), cfg)),
        dataset_fingerprint: dataset.fingerprint(),
        ..model.provenance().clone()
    };
    let tuned = ModelCheckpoint::new(spec.clone(), params, provenance)?;
    Ok((tuned, FineTuneReport { epochs_run, initial_loss: initial, best_loss: best }))
}

/// Fraction of `dataset` the model classifies correctly.
pub fn accuracy(model: &ModelCheckpoint, dataset: &LabeledDataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let net = model.network();
    let correct = dataset
        .rows()
        .zip(dataset.labels())
        .filter(|(x, &y)| argmax(&net.logits(x)) == y)
        .count();
    correct as f64 / dataset.len() as f64
}
