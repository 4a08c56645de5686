use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::divergence::{js_divergence, sym_kl};
use super::ensemble::Ensemble;
use super::table::{Metric, ScoreColumn};
use crate::attacks::{adv_distance_with_stream, AttackConfig};
use crate::data::{DatasetSplit, LabeledDataset};
use crate::dp::PrivacyLadder;
use crate::error::{ensure, Result};
use crate::nn::{fine_tune, train, FineTuneConfig, ModelCheckpoint, ModelSpec, TrainConfig};
use crate::rng::RngStream;

/// Minimal adversarial distance per example. Example `id` draws restart
/// randomness from stream `id` of `cfg.seed`.
pub fn score_adv(model: &ModelCheckpoint, dataset: &LabeledDataset, cfg: &AttackConfig) -> Result<ScoreColumn> {
    cfg.validate()?;
    let raw = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(cfg.seed, u64::from(dataset.ids()[i]));
            adv_distance_with_stream(model, dataset.row(i), dataset.labels()[i], cfg, stream).map(|r| r.distance)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreColumn::for_metric(Metric::Adv, dataset.ids().to_vec(), raw)
}

/// Which side of a split receives `ret` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    /// Train on `split.train`, fine-tune on `split.holdout`, score `split.train`.
    TrainSide,
    /// Train on `split.holdout`, fine-tune on `split.train`, score `split.holdout`.
    TestSide,
}

/// Per-example symmetric KL between two models' predictions.
pub fn ret_between(theta: &ModelCheckpoint, theta_bar: &ModelCheckpoint, dataset: &LabeledDataset) -> Result<ScoreColumn> {
    let raw = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = dataset.row(i);
            sym_kl(theta.forward(x)?.as_slice(), theta_bar.forward(x)?.as_slice())
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreColumn::for_metric(Metric::Ret, dataset.ids().to_vec(), raw)
}

/// Retraining divergence: how far an example's prediction moves when the
/// model is fine-tuned on data that excludes it.
pub fn score_ret(
    split: &DatasetSplit,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    fine_tune_cfg: &FineTuneConfig,
    target: ScoreTarget,
) -> Result<ScoreColumn> {
    let sides = match target {
        ScoreTarget::TrainSide => split.clone(),
        ScoreTarget::TestSide => split.swapped(),
    };
    ensure!(!sides.train.is_empty() && !sides.holdout.is_empty(), "both sides of the split must be nonempty");
    let theta = train(spec, &sides.train, &train_cfg.fitted_to(sides.train.len()))?;
    let (theta_bar, _) = fine_tune(&theta, &sides.holdout, fine_tune_cfg)?;
    ret_between(&theta, &theta_bar, &sides.train)
}

/// `ret` for every example of the split: train-side scores for `split.train`
/// and test-side scores for `split.holdout`.
pub fn score_ret_both_sides(
    split: &DatasetSplit,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    fine_tune_cfg: &FineTuneConfig,
) -> Result<ScoreColumn> {
    let (a, b) = rayon::join(
        || score_ret(split, spec, train_cfg, fine_tune_cfg, ScoreTarget::TrainSide),
        || score_ret(split, spec, train_cfg, fine_tune_cfg, ScoreTarget::TestSide),
    );
    ScoreColumn::concat(&[a?, b?])
}

/// Member predictions, indexed `[example][member]`.
fn member_probs(ensemble: &Ensemble, dataset: &LabeledDataset) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..dataset.len())
        .into_par_iter()
        .map(|i| ensemble.members.iter().map(|m| Ok(m.forward(dataset.row(i))?.into_vec())).collect())
        .collect()
}

/// Ensemble disagreement: `(1/N^2) * sum_i sum_j JS(f_i(x), f_j(x))` over all
/// ordered pairs, diagonal included.
pub fn score_agr(ensemble: &Ensemble, dataset: &LabeledDataset) -> Result<ScoreColumn> {
    ensure!(ensemble.len() >= 2, "agreement needs at least 2 members, got {}", ensemble.len());
    let n = ensemble.len() as f64;
    let raw = member_probs(ensemble, dataset)?
        .par_iter()
        .map(|probs| {
            let mut total = 0.0;
            for p in probs {
                for q in probs {
                    total += js_divergence(p, q)?;
                }
            }
            Ok(total / (n * n))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreColumn::for_metric(Metric::Agr, dataset.ids().to_vec(), raw)
}

/// Mean over members of the top predicted probability.
pub fn score_conf(ensemble: &Ensemble, dataset: &LabeledDataset) -> Result<ScoreColumn> {
    ensure!(!ensemble.is_empty(), "confidence needs at least 1 member");
    let n = ensemble.len() as f64;
    let raw = member_probs(ensemble, dataset)?
        .iter()
        .map(|probs| probs.iter().map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n)
        .collect();
    ScoreColumn::for_metric(Metric::Conf, dataset.ids().to_vec(), raw)
}

/// Privacy tolerance: the highest ladder level at which the example is
/// classified correctly by at least `reliability` of the replicates there and
/// at every less private level. `-1` when even the least private level fails.
/// Failed levels are skipped.
pub fn score_priv(ladder: &PrivacyLadder, dataset: &LabeledDataset, reliability: f64) -> Result<ScoreColumn> {
    ensure!(reliability > 0.0 && reliability <= 1.0, "reliability must be in (0, 1], got {reliability}");
    let mut levels: Vec<_> = ladder.successful_levels().collect();
    ensure!(levels.len() >= 2, "ladder has only {} successful levels", levels.len());
    levels.sort_by_key(|l| l.level_index);
    let raw = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (dataset.row(i), dataset.labels()[i]);
            let mut best = -1.0;
            for level in &levels {
                let mut correct = 0usize;
                for m in &level.models {
                    if m.predict(x)? == y {
                        correct += 1;
                    }
                }
                if (correct as f64) < reliability * level.models.len() as f64 - 1e-9 {
                    break;
                }
                best = level.level_index as f64;
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreColumn::for_metric(Metric::Priv, dataset.ids().to_vec(), raw)
}
