use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{ensure, Result};
use crate::nn::{train_with_stream, ModelCheckpoint, ModelSpec, TrainConfig};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_members: usize,
    /// Hidden widths cycled across members; 0 means a linear model.
    pub capacities: Vec<usize>,
    pub subset_fraction: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { n_members: 20, capacities: vec![16, 32, 64], subset_fraction: 0.8, train: TrainConfig::default(), seed: 0 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_members >= 2, "an ensemble needs at least 2 members");
        ensure!(!self.capacities.is_empty(), "capacity grid is empty");
        ensure!(
            self.subset_fraction > 0.0 && self.subset_fraction <= 1.0,
            "subset fraction must be in (0, 1], got {}",
            self.subset_fraction
        );
        Ok(())
    }
}

/// What distinguishes one member from another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberConfig {
    pub capacity: usize,
    pub stream_id: u64,
    pub subset_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<ModelCheckpoint>,
    pub member_configs: Vec<MemberConfig>,
}

impl Ensemble {
    /// Wraps already trained models, e.g. loaded checkpoints.
    pub fn from_members(members: Vec<ModelCheckpoint>) -> Result<Self> {
        ensure!(!members.is_empty(), "ensemble has no members");
        let member_configs = members
            .iter()
            .map(|m| MemberConfig {
                capacity: m.spec().hidden_widths.first().copied().unwrap_or(0),
                stream_id: m.provenance().stream_id,
                subset_fingerprint: m.provenance().dataset_fingerprint.clone(),
            })
            .collect();
        Ok(Self { members, member_configs })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn member_spec(dataset: &LabeledDataset, capacity: usize) -> Result<ModelSpec> {
    if capacity == 0 {
        ModelSpec::linear(dataset.dim(), dataset.num_classes())
    } else {
        ModelSpec::mlp(dataset.dim(), &[capacity], dataset.num_classes())
    }
}

/// Member `i` uses capacity `capacities[i % len]`, trains on its own random
/// `subset_fraction` sample, and draws all randomness from stream `i` of the
/// master seed. Members train in parallel.
pub fn build_ensemble(dataset: &LabeledDataset, cfg: &EnsembleConfig) -> Result<Ensemble> {
    cfg.validate()?;
    ensure!(!dataset.is_empty(), "cannot train an ensemble on an empty dataset");
    let n = dataset.len();
    let subset_len = ((cfg.subset_fraction * n as f64).round() as usize).clamp(1, n);
    let results: Vec<Result<(ModelCheckpoint, MemberConfig)>> = (0..cfg.n_members)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(cfg.seed, i as u64);
            let capacity = cfg.capacities[i % cfg.capacities.len()];
            let subset = if subset_len == n {
                dataset.clone()
            } else {
                let mut idx = sample(&mut stream.child(0).rng(), n, subset_len).into_vec();
                idx.sort_unstable();
                dataset.select(&idx)
            };
            let spec = member_spec(dataset, capacity)?;
            let model = train_with_stream(&spec, &subset, &cfg.train.fitted_to(subset.len()), stream.child(1))?;
            Ok((model, MemberConfig { capacity, stream_id: i as u64, subset_fingerprint: subset.fingerprint() }))
        })
        .collect();
    let (members, member_configs) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(Ensemble { members, member_configs })
}
