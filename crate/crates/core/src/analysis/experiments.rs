//! Training experiments driven by a prototypicality ranking.
//!
//! Every ranking here is ordered from least to most prototypical, as returned
//! by [`ScoreTable::ranking`]: position 0 is the strongest outlier. All models
//! in one experiment train from the same seed so that curves differ only in
//! their data.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::attacks::{adv_distance_with_stream, AttackConfig};
use crate::data::{inject_label_noise, subset_by_rank, LabeledDataset};
use crate::error::{ensure, Result};
use crate::metrics::{Metric, ScoreTable};
use crate::nn::{accuracy, train, train_with_stream, ModelCheckpoint, ModelSpec, TrainConfig};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScope {
    FullTest,
    /// Test points at or above the 50th percentile of a test-side score.
    TopHalfTest,
}

impl fmt::Display for EvalScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalScope::FullTest => "full_test",
            EvalScope::TopHalfTest => "top_half_test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    /// Sliding window of fixed size; axis is the window start as a percentile.
    Window,
    /// The `k` most prototypical examples; axis is `k` as a percentage of n.
    Prefix,
    /// The `k` least prototypical examples.
    Suffix,
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Curve::Window => "window",
            Curve::Prefix => "prefix",
            Curve::Suffix => "suffix",
        })
    }
}

/// A test set together with the scope it represents.
#[derive(Debug, Clone, Copy)]
pub struct EvalTarget<'a> {
    pub scope: EvalScope,
    pub data: &'a LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumResult {
    pub curve: Curve,
    pub eval_scope: EvalScope,
    /// Strictly increasing percentiles.
    pub axis: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl CurriculumResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["axis", "accuracy"])?;
        for (a, acc) in self.axis.iter().zip(&self.accuracy) {
            w.write_record([a.to_string(), acc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Test points whose `metric` percentile in `test_table` is at least 50.
pub fn top_half_test(test: &LabeledDataset, test_table: &ScoreTable, metric: &Metric) -> Result<LabeledDataset> {
    let pct = test_table.require(metric)?;
    let keep: HashSet<u32> = test_table.ids().iter().zip(pct).filter(|(_, &p)| p >= 50.0).map(|(&id, _)| id).collect();
    let subset = test.select_ids(&keep);
    ensure!(!subset.is_empty(), "top-half test subset is empty");
    Ok(subset)
}

fn check_ranking(dataset: &LabeledDataset, ranking: &[u32]) -> Result<()> {
    ensure!(ranking.len() == dataset.len(), "ranking has {} ids, dataset has {}", ranking.len(), dataset.len());
    Ok(())
}

/// Trains one model per `(lo, hi)` rank range, in parallel.
fn train_ranges(
    dataset: &LabeledDataset,
    ranking: &[u32],
    ranges: &[(usize, usize)],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<Vec<ModelCheckpoint>> {
    ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let subset = subset_by_rank(dataset, ranking, lo, hi)?;
            train(spec, &subset, &cfg.fitted_to(subset.len()))
        })
        .collect()
}

fn window_offsets(n: usize, window_size: usize, stride: usize) -> Result<Vec<usize>> {
    ensure!(window_size > 0 && window_size <= n, "window size {window_size} must be in 1..={n}");
    ensure!(stride > 0, "stride must be positive");
    Ok((0..=n - window_size).step_by(stride).collect())
}

/// Trains a fresh model on each ranking window `[k, k + window_size)` for
/// `k = 0, stride, 2 * stride, ...` and reports test accuracy against `k / n`.
pub fn curriculum_window_experiment(
    dataset: &LabeledDataset,
    ranking: &[u32],
    window_size: usize,
    stride: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    test: &LabeledDataset,
) -> Result<CurriculumResult> {
    check_ranking(dataset, ranking)?;
    let offsets = window_offsets(dataset.len(), window_size, stride)?;
    let ranges: Vec<(usize, usize)> = offsets.iter().map(|&k| (k, k + window_size)).collect();
    let models = train_ranges(dataset, ranking, &ranges, spec, cfg)?;
    let n = dataset.len() as f64;
    Ok(CurriculumResult {
        curve: Curve::Window,
        eval_scope: EvalScope::FullTest,
        axis: offsets.iter().map(|&k| k as f64 / n * 100.0).collect(),
        accuracy: models.iter().map(|m| accuracy(m, test)).collect(),
    })
}

/// Trains on the `k` most and the `k` least prototypical examples for each
/// `k` in `sizes` and evaluates every model on each target. Returns the prefix
/// curves followed by the suffix curves, one per target.
pub fn curriculum_prefix_suffix_experiment(
    dataset: &LabeledDataset,
    ranking: &[u32],
    sizes: &[usize],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    targets: &[EvalTarget<'_>],
) -> Result<Vec<CurriculumResult>> {
    check_ranking(dataset, ranking)?;
    let n = dataset.len();
    ensure!(!sizes.is_empty(), "no prefix sizes given");
    ensure!(sizes.windows(2).all(|w| w[0] < w[1]), "prefix sizes must be strictly ascending");
    ensure!(sizes[0] > 0 && sizes[sizes.len() - 1] <= n, "prefix sizes must lie in 1..={n}");
    let mut out = Vec::new();
    for curve in [Curve::Prefix, Curve::Suffix] {
        let ranges: Vec<(usize, usize)> = sizes
            .iter()
            .map(|&k| match curve {
                Curve::Prefix => (n - k, n),
                _ => (0, k),
            })
            .collect();
        let models = train_ranges(dataset, ranking, &ranges, spec, cfg)?;
        for t in targets {
            out.push(CurriculumResult {
                curve,
                eval_scope: t.scope,
                axis: sizes.iter().map(|&k| k as f64 / n as f64 * 100.0).collect(),
                accuracy: models.iter().map(|m| accuracy(m, t.data)).collect(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAblation {
    pub clean: CurriculumResult,
    pub noisy: CurriculumResult,
    /// `clean - noisy` accuracy per window.
    pub deltas: Vec<f64>,
    pub fraction: f64,
}

impl NoiseAblation {
    pub fn mean_delta(&self) -> f64 {
        self.deltas.iter().sum::<f64>() / self.deltas.len() as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["axis", "clean_accuracy", "noisy_accuracy", "delta"])?;
        for i in 0..self.deltas.len() {
            w.write_record([
                self.clean.axis[i].to_string(),
                self.clean.accuracy[i].to_string(),
                self.noisy.accuracy[i].to_string(),
                self.deltas[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Window experiment on the clean data and again after flipping `fraction`
/// of the training labels (drawn with `noise_seed`). The ranking is reused.
#[allow(clippy::too_many_arguments)]
pub fn label_noise_ablation(
    dataset: &LabeledDataset,
    ranking: &[u32],
    fraction: f64,
    noise_seed: u64,
    window_size: usize,
    stride: usize,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    test: &LabeledDataset,
) -> Result<NoiseAblation> {
    let noisy_data = inject_label_noise(dataset, fraction, noise_seed)?;
    let clean = curriculum_window_experiment(dataset, ranking, window_size, stride, spec, cfg, test)?;
    let noisy = curriculum_window_experiment(&noisy_data, ranking, window_size, stride, spec, cfg, test)?;
    let deltas = clean.accuracy.iter().zip(&noisy.accuracy).map(|(c, n)| c - n).collect();
    Ok(NoiseAblation { clean, noisy, deltas, fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRobustness {
    /// Slice start as a percentile of the ranking; `None` for the full-data baseline.
    pub axis: Option<f64>,
    /// Mean finite adversarial distance over the evaluation set.
    pub mean_distance: f64,
    /// Evaluation points where no adversarial example was found.
    pub unreachable: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub slices: Vec<SliceRobustness>,
    pub baseline: SliceRobustness,
}

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["axis", "mean_distance", "unreachable", "accuracy"])?;
        for s in self.slices.iter().chain(std::iter::once(&self.baseline)) {
            w.write_record([
                s.axis.map_or("baseline".to_string(), |a| a.to_string()),
                s.mean_distance.to_string(),
                s.unreachable.to_string(),
                s.accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn slice_robustness(model: &ModelCheckpoint, eval: &LabeledDataset, attack: &AttackConfig, axis: Option<f64>) -> Result<SliceRobustness> {
    let distances = (0..eval.len())
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(attack.seed, u64::from(eval.ids()[i]));
            adv_distance_with_stream(model, eval.row(i), eval.labels()[i], attack, stream).map(|r| r.distance)
        })
        .collect::<Result<Vec<f64>>>()?;
    let finite: Vec<f64> = distances.iter().copied().filter(|d| d.is_finite()).collect();
    Ok(SliceRobustness {
        axis,
        mean_distance: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        unreachable: distances.len() - finite.len(),
        accuracy: accuracy(model, eval),
    })
}

/// Trains one model per ranking slice `[k, k + slice_size)` plus one on the
/// full data, and reports the mean adversarial distance of each over `eval`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_by_slice(
    dataset: &LabeledDataset,
    ranking: &[u32],
    slice_size: usize,
    offsets: &[usize],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    attack: &AttackConfig,
    eval: &LabeledDataset,
) -> Result<RobustnessReport> {
    check_ranking(dataset, ranking)?;
    let n = dataset.len();
    ensure!(slice_size > 0 && slice_size <= n, "slice size {slice_size} must be in 1..={n}");
    ensure!(offsets.iter().all(|&k| k + slice_size <= n), "slice offsets must leave room for a full slice");
    attack.validate()?;
    let ranges: Vec<(usize, usize)> = offsets.iter().map(|&k| (k, k + slice_size)).collect();
    let models = train_ranges(dataset, ranking, &ranges, spec, cfg)?;
    let baseline_model = train(spec, dataset, &cfg.fitted_to(n))?;
    let slices = models
        .iter()
        .zip(offsets)
        .map(|(m, &k)| slice_robustness(m, eval, attack, Some(k as f64 / n as f64 * 100.0)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = slice_robustness(&baseline_model, eval, attack, None)?;
    Ok(RobustnessReport { slices, baseline })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooEntry {
    pub id: u32,
    /// Whether the id was present in the dataset at all.
    pub present: bool,
    /// Per test example: mean over seeds of the mean absolute change in the
    /// predicted probability vector.
    pub prediction_deltas: Vec<f64>,
    /// Mean over seeds of (with - without) mean true-class probability on the test set.
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// Two-sided paired t-test across seeds.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub replicates: usize,
    pub entries: Vec<LooEntry>,
}

impl LooReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "present", "mean_abs_prediction_delta", "mean_difference", "t_statistic", "p_value"])?;
        for e in &self.entries {
            let mean_abs = e.prediction_deltas.iter().sum::<f64>() / e.prediction_deltas.len().max(1) as f64;
            w.write_record([
                e.id.to_string(),
                e.present.to_string(),
                mean_abs.to_string(),
                e.mean_difference.to_string(),
                e.t_statistic.to_string(),
                e.p_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two-sided one-sample t-test of `diffs` against zero. Returns `(t, p)`.
/// All-zero differences give `(0, 1)`; constant nonzero ones give `(±inf, 0)`.
pub fn paired_t_test(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("at least 2 replicates");
    (t, 2.0 * dist.cdf(-t.abs()))
}

fn true_class_mean(model: &ModelCheckpoint, test: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, &y) in test.rows().zip(test.labels()) {
        total += model.forward(x)?.as_slice()[y];
    }
    Ok(total / test.len() as f64)
}

/// For each candidate id, trains `replicates` model pairs (with and without
/// the id, replicate `r` using stream `r` of `cfg.seed` on both sides) and
/// measures how test predictions move.
pub fn leave_one_out_influence(
    dataset: &LabeledDataset,
    candidates: &[u32],
    test: &LabeledDataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    replicates: usize,
) -> Result<LooReport> {
    ensure!(replicates >= 2, "need at least 2 replicates per condition, got {replicates}");
    ensure!(!test.is_empty(), "test set is empty");
    let with: Vec<ModelCheckpoint> = (0..replicates)
        .into_par_iter()
        .map(|r| train_with_stream(spec, dataset, &cfg.fitted_to(dataset.len()), RngStream::new(cfg.seed, r as u64)))
        .collect::<Result<_>>()?;
    let index = dataset.index_of();
    let entries = candidates
        .iter()
        .map(|&id| {
            let reduced = dataset.without_ids(&HashSet::from([id]));
            ensure!(!reduced.is_empty(), "leaving out {id} empties the dataset");
            let without: Vec<ModelCheckpoint> = (0..replicates)
                .into_par_iter()
                .map(|r| train_with_stream(spec, &reduced, &cfg.fitted_to(reduced.len()), RngStream::new(cfg.seed, r as u64)))
                .collect::<Result<_>>()?;
            let mut prediction_deltas = vec![0.0; test.len()];
            let mut diffs = Vec::with_capacity(replicates);
            for (a, b) in with.iter().zip(&without) {
                for (i, x) in test.rows().enumerate() {
                    let (p, q) = (a.forward(x)?, b.forward(x)?);
                    let change: f64 = p.as_slice().iter().zip(q.as_slice()).map(|(u, v)| (u - v).abs()).sum::<f64>();
                    prediction_deltas[i] += change / p.len() as f64 / replicates as f64;
                }
                diffs.push(true_class_mean(a, test)? - true_class_mean(b, test)?);
            }
            let (t_statistic, p_value) = paired_t_test(&diffs);
            Ok(LooEntry {
                id,
                present: index.contains_key(&id),
                prediction_deltas,
                mean_difference: diffs.iter().sum::<f64>() / replicates as f64,
                t_statistic,
                p_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooReport { replicates, entries })
}
