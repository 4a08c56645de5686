//! End-to-end scoring: one call that trains every model the five metrics need
//! and returns the assembled [`ScoreTable`].

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::analysis::add_standard_combinations;
use crate::attacks::AttackConfig;
use crate::data::{split, DatasetSplit, GenConfig, LabeledDataset, SubmodeConfig};
use crate::dp::{build_privacy_ladder, DpConfig, PrivacyLadder};
use crate::error::{ensure, Result};
use crate::metrics::{
    assemble_table, build_ensemble, score_adv, score_agr, score_conf, score_priv, score_ret_both_sides, Ensemble,
    EnsembleConfig, ScoreTable,
};
use crate::nn::{train, FineTuneConfig, ModelCheckpoint, ModelSpec, TrainConfig};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    /// Strictly ascending noise multipliers.
    pub sigmas: Vec<f64>,
    pub replicates: usize,
    pub delta: f64,
    pub dp: DpConfig,
    /// Share of replicates that must be correct at a level.
    pub reliability: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self { sigmas: vec![0.5, 1.0, 2.0, 4.0, 8.0], replicates: 10, delta: 1e-5, dp: DpConfig::default(), reliability: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Hidden widths of the baseline model (used by `adv` and `ret`) and of
    /// the private ladder models.
    pub hidden_widths: Vec<usize>,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    /// When true, `attack.eps_upper` is replaced by the feature-box diameter.
    pub eps_from_box: bool,
    pub holdout_fraction: f64,
    pub fine_tune: FineTuneConfig,
    pub ensemble: EnsembleConfig,
    pub ladder: LadderConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![32],
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            eps_from_box: true,
            holdout_fraction: 0.5,
            fine_tune: FineTuneConfig::default(),
            ensemble: EnsembleConfig::default(),
            ladder: LadderConfig::default(),
            seed: 0,
        }
    }
}

/// Independent per-component seed derived from a master seed.
pub fn derive_seed(master: u64, component: u64) -> u64 {
    RngStream::new(master, component).rng().next_u64()
}

impl PipelineConfig {
    /// Copy with every component seed derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg.train.seed = derive_seed(seed, 1);
        cfg.attack.seed = derive_seed(seed, 2);
        cfg.fine_tune.seed = derive_seed(seed, 3);
        cfg.ensemble.seed = derive_seed(seed, 4);
        cfg.ladder.dp.seed = derive_seed(seed, 5);
        cfg
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, 6)
    }

    pub fn model_spec(&self, dataset: &LabeledDataset) -> Result<ModelSpec> {
        ModelSpec::mlp(dataset.dim(), &self.hidden_widths, dataset.num_classes())
    }

    pub fn attack_for(&self, dataset: &LabeledDataset) -> AttackConfig {
        if self.eps_from_box {
            self.attack.clone().with_box_diameter(dataset)
        } else {
            self.attack.clone()
        }
    }
}

/// Everything trained along the way, kept for reuse by later analyses.
#[derive(Debug, Clone)]
pub struct ScoreArtifacts {
    pub table: ScoreTable,
    pub baseline: ModelCheckpoint,
    pub ensemble: Ensemble,
    pub ladder: PrivacyLadder,
    pub split: DatasetSplit,
}

pub fn train_baseline(dataset: &LabeledDataset, cfg: &PipelineConfig) -> Result<ModelCheckpoint> {
    train(&cfg.model_spec(dataset)?, dataset, &cfg.train.fitted_to(dataset.len()))
}

pub fn build_ladder(dataset: &LabeledDataset, cfg: &PipelineConfig) -> Result<PrivacyLadder> {
    let l = &cfg.ladder;
    build_privacy_ladder(&cfg.model_spec(dataset)?, dataset, &l.sigmas, l.replicates, &l.dp, l.delta)
}

/// Scores every example of `dataset` by all five metrics, adds the `boundary`
/// and `ensemble` combinations, and attaches labels and annotations.
pub fn score_all(dataset: &LabeledDataset, cfg: &PipelineConfig) -> Result<ScoreArtifacts> {
    ensure!(dataset.len() >= 4, "need at least 4 examples to score");
    let spec = cfg.model_spec(dataset)?;
    let baseline = train_baseline(dataset, cfg)?;
    let adv = score_adv(&baseline, dataset, &cfg.attack_for(dataset))?;
    let split = split(dataset, cfg.holdout_fraction, cfg.split_seed())?;
    let ret = score_ret_both_sides(&split, &spec, &cfg.train, &cfg.fine_tune)?;
    let ensemble = build_ensemble(dataset, &cfg.ensemble)?;
    let agr = score_agr(&ensemble, dataset)?;
    let conf = score_conf(&ensemble, dataset)?;
    let ladder = build_ladder(dataset, cfg)?;
    let priv_col = score_priv(&ladder, dataset, cfg.ladder.reliability)?;
    let mut table = assemble_table(vec![adv, ret, agr, conf, priv_col])?.with_dataset_meta(dataset)?;
    add_standard_combinations(&mut table)?;
    Ok(ScoreArtifacts { table, baseline, ensemble, ladder, split })
}

/// Named synthetic datasets used by the test suites and the CLI.
pub mod presets {
    use super::*;

    /// 4 classes in 2-D, 500 per class, means 6 apart, 2% mislabels.
    pub fn standard(seed: u64) -> GenConfig {
        GenConfig {
            num_classes: 4,
            dims: 2,
            n_per_class: 500,
            class_separation: 6.0,
            mislabel_fraction: 0.02,
            submode: None,
            seed,
        }
    }

    /// The standard mixture plus 5% of class 1 displaced by 4 standard deviations.
    /// A middle class is used so that the displaced members sit near a boundary.
    pub fn with_submode(seed: u64) -> GenConfig {
        GenConfig { submode: Some(SubmodeConfig { class: 1, fraction: 0.05, mean_offset: 4.0 }), ..standard(seed) }
    }

    /// The standard mixture with 10% mislabels.
    pub fn noisy(seed: u64) -> GenConfig {
        GenConfig { mislabel_fraction: 0.1, ..standard(seed) }
    }

    /// Clean test draw matching `train`'s geometry under another seed.
    pub fn test_split(train: &GenConfig, seed: u64, n_per_class: usize) -> GenConfig {
        GenConfig { mislabel_fraction: 0.0, submode: None, n_per_class, seed, ..train.clone() }
    }
}
