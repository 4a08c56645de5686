//! Differentially private SGD and the privacy ladder behind the `priv` metric.
//!
//! Minibatches are fixed-size shuffled batches rather than Poisson samples; the
//! accountant uses `q = batch_size / n` as the sampling rate. The reported ε is
//! an upper bound from strong composition, which is loose but strictly monotone
//! in the noise multiplier, and the ladder only relies on the ordering.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{ensure, Error, Result};
use crate::fingerprint::fingerprint_debug;
use crate::nn::{accuracy, init_params, ModelCheckpoint, ModelSpec, Provenance};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example l2 clipping bound C. `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    /// σ; the per-coordinate noise standard deviation is σ·C.
    pub noise_multiplier: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { clip_norm: 1.0, noise_multiplier: 1.0, batch_size: 32, epochs: 10, learning_rate: 0.1, seed: 0 }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.clip_norm > 0.0, "clip norm must be positive");
        ensure!(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite(), "noise multiplier must be >= 0");
        ensure!(self.batch_size > 0, "batch size must be positive");
        ensure!(self.learning_rate >= 0.0, "learning rate must be nonnegative");
        Ok(())
    }
}

/// Diagnostics of one private step.
#[derive(Debug, Clone, PartialEq)]
pub struct DpStepStats {
    /// l2 norms of the per-example gradients after clipping.
    pub clipped_norms: Vec<f64>,
    /// The privatised mean gradient that was applied.
    pub noisy_gradient: Vec<f64>,
}

/// One DP-SGD update in place: clip each per-example gradient to `clip_norm`,
/// sum, add `N(0, (σC)^2)` per coordinate, divide by the batch size, and take
/// an SGD step.
pub fn dp_sgd_step<R: Rng>(
    spec: &ModelSpec,
    params: &mut [f64],
    inputs: &[&[f64]],
    labels: &[usize],
    dp: &DpConfig,
    rng: &mut R,
) -> Result<DpStepStats> {
    dp.validate()?;
    ensure!(!inputs.is_empty(), "empty batch");
    ensure!(inputs.len() == labels.len(), "batch inputs and labels differ in length");
    ensure!(params.len() == spec.param_count(), "parameter vector does not match spec");
    let layout = spec.layers();
    let net = crate::nn::Network { spec, layout: &layout, params };
    let mut sum = vec![0.0; params.len()];
    let mut per = vec![0.0; params.len()];
    let mut clipped_norms = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(labels) {
        ensure!(x.len() == spec.input_dim && y < spec.num_classes, "batch example does not fit the model");
        per.iter_mut().for_each(|g| *g = 0.0);
        net.backprop(x, y, Some((&mut per, 1.0)), None);
        let norm = per.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { epoch: 0, detail: "non-finite per-example gradient".into() });
        }
        let factor = if norm > dp.clip_norm { dp.clip_norm / norm } else { 1.0 };
        let mut clipped_sq = 0.0;
        for (s, g) in sum.iter_mut().zip(&per) {
            let c = g * factor;
            clipped_sq += c * c;
            *s += c;
        }
        clipped_norms.push(clipped_sq.sqrt());
    }
    let std = dp.noise_multiplier * dp.clip_norm;
    let b = inputs.len() as f64;
    let noisy: Vec<f64> = sum
        .iter()
        .map(|s| {
            let noise = if std > 0.0 { std * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            (s + noise) / b
        })
        .collect();
    for (p, g) in params.iter_mut().zip(&noisy) {
        *p -= dp.learning_rate * g;
    }
    Ok(DpStepStats { clipped_norms, noisy_gradient: noisy })
}

/// Trains a private model from scratch. Randomness comes from children of `stream`.
pub fn dp_train(spec: &ModelSpec, dataset: &LabeledDataset, dp: &DpConfig, stream: RngStream) -> Result<ModelCheckpoint> {
    dp.validate()?;
    ensure!(!dataset.is_empty(), "cannot train on an empty dataset");
    ensure!(dataset.dim() == spec.input_dim, "dataset dim does not match model");
    let batch = dp.batch_size.min(dataset.len());
    let mut params = init_params(spec, stream.child(0));
    let mut shuffle = stream.child(1).rng();
    let mut noise = stream.child(2).rng();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..dp.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(batch) {
            let (xs, ys) = dataset.batch(chunk);
            dp_sgd_step(spec, &mut params, &xs, &ys, dp, &mut noise).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                other => other,
            })?;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, detail: "non-finite parameter".into() });
        }
    }
    let provenance = Provenance {
        seed: stream.seed,
        stream_id: stream.stream_id,
        dataset_fingerprint: dataset.fingerprint(),
        config_fingerprint: fingerprint_debug(dp),
    };
    ModelCheckpoint::new(spec.clone(), params, provenance)
}

/// Upper bound on ε after `total_steps` subsampled Gaussian steps.
///
/// Each step is `(ε₀, δ₀)`-DP with `ε₀ = q·sqrt(2 ln(1.25/δ₀))/σ`; the steps
/// are combined with the strong composition theorem
/// `ε = sqrt(2T ln(1/δ')) ε₀ + T ε₀ (e^ε₀ − 1)`. The budget `delta` is split
/// evenly: `δ' = delta/2` and `δ₀ = delta/(2T)`.
pub fn epsilon_of(dp: &DpConfig, total_steps: u64, sampling_rate: f64, delta: f64) -> Result<f64> {
    let noise_multiplier = dp.noise_multiplier;
    ensure!(noise_multiplier >= 0.0, "noise multiplier must be nonnegative");
    ensure!(sampling_rate > 0.0 && sampling_rate <= 1.0, "sampling rate must be in (0, 1]");
    ensure!(delta > 0.0 && delta < 1.0, "delta must be in (0, 1)");
    if noise_multiplier == 0.0 {
        return Ok(f64::INFINITY);
    }
    if total_steps == 0 {
        return Ok(0.0);
    }
    let t = total_steps as f64;
    let delta_slack = delta / 2.0;
    let delta_step = delta / (2.0 * t);
    let eps_step = sampling_rate * (2.0 * (1.25 / delta_step).ln()).sqrt() / noise_multiplier;
    Ok((2.0 * t * (1.0 / delta_slack).ln()).sqrt() * eps_step + t * eps_step * eps_step.exp_m1())
}

/// One rung of the ladder.
#[derive(Debug, Clone)]
pub struct PrivacyLevel {
    pub level_index: usize,
    pub noise_multiplier: f64,
    pub epsilon: f64,
    pub models: Vec<ModelCheckpoint>,
    /// Training accuracy of each replicate.
    pub accuracies: Vec<f64>,
    /// Set when some replicate diverged; such levels are skipped by scoring.
    pub failure: Option<String>,
}

impl PrivacyLevel {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct PrivacyLadder {
    pub levels: Vec<PrivacyLevel>,
    pub replicates_per_level: usize,
    pub delta: f64,
    pub base: DpConfig,
}

impl PrivacyLadder {
    pub fn successful_levels(&self) -> impl Iterator<Item = &PrivacyLevel> {
        self.levels.iter().filter(|l| l.succeeded())
    }
}

/// Trains `replicates` private models for each noise multiplier in `sigmas`
/// (strictly ascending). Level `i` replicate `r` draws from stream
/// `i * replicates + r` of `base.seed`. Jobs run in parallel; results do not
/// depend on the thread count.
pub fn build_privacy_ladder(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    sigmas: &[f64],
    replicates: usize,
    base: &DpConfig,
    delta: f64,
) -> Result<PrivacyLadder> {
    ensure!(sigmas.len() >= 2, "a ladder needs at least two levels");
    ensure!(sigmas.iter().all(|&s| s > 0.0 && s.is_finite()), "noise multipliers must be positive");
    ensure!(sigmas.windows(2).all(|w| w[0] < w[1]), "noise multipliers must be strictly ascending");
    ensure!(replicates >= 1, "need at least one replicate per level");
    base.validate()?;
    let batch = base.batch_size.min(dataset.len());
    let steps = (base.epochs * dataset.len().div_ceil(batch)) as u64;
    let q = batch as f64 / dataset.len() as f64;

    let jobs: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|l| (0..replicates).map(move |r| (l, r))).collect();
    let trained: Vec<Result<ModelCheckpoint>> = jobs
        .par_iter()
        .map(|&(l, r)| {
            let dp = DpConfig { noise_multiplier: sigmas[l], ..base.clone() };
            dp_train(spec, dataset, &dp, RngStream::new(base.seed, (l * replicates + r) as u64))
        })
        .collect();

    let mut levels = Vec::with_capacity(sigmas.len());
    let mut trained = trained.into_iter();
    for (l, &sigma) in sigmas.iter().enumerate() {
        let mut models = Vec::with_capacity(replicates);
        let mut failure = None;
        for _ in 0..replicates {
            match trained.next().expect("one result per job") {
                Ok(m) => models.push(m),
                Err(Error::Diverged { epoch, detail }) => {
                    failure.get_or_insert(format!("diverged at epoch {epoch}: {detail}"));
                }
                Err(e) => return Err(e),
            }
        }
        if failure.is_some() {
            log::warn!("privacy level {l} (sigma {sigma}) failed");
            models.clear();
        }
        let accuracies = models.iter().map(|m| accuracy(m, dataset)).collect();
        levels.push(PrivacyLevel {
            level_index: l,
            noise_multiplier: sigma,
            epsilon: epsilon_of(&DpConfig { noise_multiplier: sigma, ..base.clone() }, steps, q, delta)?,
            models,
            accuracies,
            failure,
        });
    }
    let ok = levels.iter().filter(|l| l.succeeded()).count();
    ensure!(ok >= 2, "only {ok} privacy levels trained successfully");
    Ok(PrivacyLadder { levels, replicates_per_level: replicates, delta, base: base.clone() })
}
