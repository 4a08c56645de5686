use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use protoscope::analysis::{
    combine_metrics, curriculum_prefix_suffix_experiment, curriculum_window_experiment, extract_canonical_prototypes,
    extract_memorized_exceptions, extract_uncommon_submodes, label_noise_ablation, leave_one_out_influence,
    rank_correlations, robustness_by_slice, top_half_test, CorrelationMethod, Curve, EvalScope, EvalTarget, SetName,
};
use protoscope::data::{generate_mixture, load_idx, read_dataset_csv_path, split, write_dataset_csv};
use protoscope::metrics::{
    assemble_table, build_ensemble, score_adv, score_agr, score_conf, score_priv, score_ret_both_sides, ScoreColumn,
};
use protoscope::nn::{accuracy, write_checkpoint};
use protoscope::pipeline::{build_ladder, score_all, train_baseline};
use protoscope::{LabeledDataset, Metric, ScoreTable};

use crate::config::{DatasetSource, RunConfig};
use crate::output::Outputs;

/// A problem with the requested configuration, reported with exit code 1.
#[derive(Debug)]
pub struct BadConfig(pub String);

impl fmt::Display for BadConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadConfig {}

macro_rules! bad_config {
    ($($arg:tt)*) => {
        return Err(BadConfig(format!($($arg)*)).into())
    };
}

fn load_source(source: &str, synthetic: impl FnOnce() -> protoscope::GenConfig) -> anyhow::Result<LabeledDataset> {
    Ok(match DatasetSource::parse(source)? {
        DatasetSource::Synthetic => generate_mixture(&synthetic())?,
        DatasetSource::Idx { images, labels } => load_idx(&images, &labels)?,
        DatasetSource::Csv(path) => {
            read_dataset_csv_path(&path).with_context(|| format!("reading dataset {}", path.display()))?
        }
    })
}

pub fn load_dataset(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<LabeledDataset> {
    let ds = load_source(&cfg.dataset, || cfg.generate.clone())?;
    out.input("dataset", &cfg.dataset, ds.fingerprint());
    log::info!("dataset {}: {} examples, {} classes, dim {}", cfg.dataset, ds.len(), ds.num_classes(), ds.dim());
    Ok(ds)
}

fn load_test(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<LabeledDataset> {
    if cfg.test_dataset == "synthetic" && cfg.dataset != "synthetic" {
        bad_config!("test_dataset must be given when the training data is not synthetic");
    }
    let ds = load_source(&cfg.test_dataset, || cfg.test_gen())?;
    out.input("test_dataset", &cfg.test_dataset, ds.fingerprint());
    Ok(ds)
}

fn read_table(path: &Path, out: &mut Outputs) -> anyhow::Result<ScoreTable> {
    let bytes = std::fs::read(path).with_context(|| format!("reading score table {}", path.display()))?;
    out.input("table", &path.display().to_string(), protoscope::fingerprint(&bytes));
    Ok(ScoreTable::read_csv(bytes.as_slice())?)
}

pub fn generate(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let ds = generate_mixture(&cfg.generate)?;
    let test = generate_mixture(&cfg.test_gen())?;
    out.file("dataset.csv", |b| write_dataset_csv(&ds, b))?;
    out.file("test.csv", |b| write_dataset_csv(&test, b))?;
    println!("dataset {} ({} rows), test {} ({} rows)", ds.fingerprint(), ds.len(), test.fingerprint(), test.len());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let model = train_baseline(&ds, &cfg.pipeline)?;
    out.file("baseline.ckpt", |b| write_checkpoint(&model, b))?;
    println!("training accuracy {:.4}", accuracy(&model, &ds));
    Ok(())
}

pub fn ensemble(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let e = build_ensemble(&ds, &cfg.pipeline.ensemble)?;
    for (i, m) in e.members.iter().enumerate() {
        out.file(format!("ensemble/member_{i:03}.ckpt"), |b| write_checkpoint(m, b))?;
    }
    out.file("ensemble.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["member", "capacity", "stream_id", "subset_fingerprint", "accuracy"])?;
        for (i, (m, c)) in e.members.iter().zip(&e.member_configs).enumerate() {
            w.write_record([
                i.to_string(),
                c.capacity.to_string(),
                c.stream_id.to_string(),
                c.subset_fingerprint.clone(),
                accuracy(m, &ds).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    println!("trained {} members", e.len());
    Ok(())
}

pub fn ladder(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let ladder = build_ladder(&ds, &cfg.pipeline)?;
    for level in &ladder.levels {
        for (r, m) in level.models.iter().enumerate() {
            out.file(format!("ladder/level_{}_rep_{r:02}.ckpt", level.level_index), |b| write_checkpoint(m, b))?;
        }
    }
    out.file("ladder.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["level", "noise_multiplier", "epsilon", "mean_accuracy", "failure"])?;
        for l in &ladder.levels {
            let mean = l.accuracies.iter().sum::<f64>() / l.accuracies.len().max(1) as f64;
            w.write_record([
                l.level_index.to_string(),
                l.noise_multiplier.to_string(),
                l.epsilon.to_string(),
                mean.to_string(),
                l.failure.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    for l in &ladder.levels {
        println!("level {} sigma {} epsilon {:.3}", l.level_index, l.noise_multiplier, l.epsilon);
    }
    Ok(())
}

/// What `score` should compute.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreTargetArg {
    All,
    One(Metric),
}

impl std::str::FromStr for ScoreTargetArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            other => match other.parse::<Metric>() {
                Ok(m @ Metric::Custom(_)) => Err(format!("unknown metric {m}")),
                Ok(m) => Ok(Self::One(m)),
                Err(e) => Err(e.to_string()),
            },
        }
    }
}

fn score_columns(ds: &LabeledDataset, cfg: &RunConfig, metric: &Metric) -> anyhow::Result<Vec<ScoreColumn>> {
    let p = &cfg.pipeline;
    Ok(match metric {
        Metric::Adv => vec![score_adv(&train_baseline(ds, p)?, ds, &p.attack_for(ds))?],
        Metric::Ret => {
            let s = split(ds, p.holdout_fraction, p.split_seed())?;
            vec![score_ret_both_sides(&s, &p.model_spec(ds)?, &p.train, &p.fine_tune)?]
        }
        Metric::Agr => vec![score_agr(&build_ensemble(ds, &p.ensemble)?, ds)?],
        Metric::Conf => vec![score_conf(&build_ensemble(ds, &p.ensemble)?, ds)?],
        Metric::Priv => vec![score_priv(&build_ladder(ds, p)?, ds, p.ladder.reliability)?],
        Metric::Boundary => [Metric::Adv, Metric::Ret].iter().map(|m| score_columns(ds, cfg, m)).collect::<anyhow::Result<Vec<_>>>()?.concat(),
        Metric::Ensemble => {
            let e = build_ensemble(ds, &p.ensemble)?;
            vec![score_agr(&e, ds)?, score_conf(&e, ds)?]
        }
        Metric::Custom(name) => bad_config!("cannot score custom metric {name}"),
    })
}

fn score_table(ds: &LabeledDataset, cfg: &RunConfig, target: &ScoreTargetArg) -> anyhow::Result<ScoreTable> {
    Ok(match target {
        ScoreTargetArg::All => score_all(ds, &cfg.pipeline)?.table,
        ScoreTargetArg::One(m) => {
            let mut t = assemble_table(score_columns(ds, cfg, m)?)?.with_dataset_meta(ds)?;
            let parts = match m {
                Metric::Boundary => Some([Metric::Adv, Metric::Ret]),
                Metric::Ensemble => Some([Metric::Agr, Metric::Conf]),
                _ => None,
            };
            if let Some(parts) = parts {
                let combined = combine_metrics(&t, &parts, m.clone())?;
                t.add_column(combined)?;
            }
            t
        }
    })
}

pub fn score(cfg: &RunConfig, out: &mut Outputs, target: &ScoreTargetArg) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let table = score_table(&ds, cfg, target)?;
    let name = match target {
        ScoreTargetArg::All => "scores.csv".to_string(),
        ScoreTargetArg::One(m) => format!("scores_{m}.csv"),
    };
    out.file(&name, |b| table.write_csv(b))?;
    println!("scored {} examples by {}", table.len(), table.metrics().iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn table_path(cfg: &RunConfig, table: &Option<PathBuf>) -> PathBuf {
    table.clone().unwrap_or_else(|| cfg.out.join("scores.csv"))
}

pub fn correlate(
    cfg: &RunConfig,
    out: &mut Outputs,
    table: &Option<PathBuf>,
    method: CorrelationMethod,
    metrics: &[Metric],
) -> anyhow::Result<()> {
    let mut t = read_table(&table_path(cfg, table), out)?;
    if !metrics.is_empty() {
        let cols = metrics
            .iter()
            .map(|m| t.column(m).cloned().ok_or_else(|| BadConfig(format!("score table has no {m} column"))))
            .collect::<Result<Vec<_>, _>>()?;
        t = assemble_table(cols)?;
    }
    let n = t.metrics().len();
    if n < 2 {
        bad_config!("need ≥ 2 metrics to correlate, table has {n}");
    }
    let m = rank_correlations(&t, method)?;
    out.file(format!("correlation_{method}.csv"), |b| m.write_csv(b))?;
    for (name, row) in m.metrics.iter().zip(&m.values) {
        println!("{name:>9} {}", row.iter().map(|v| format!("{v:>7.3}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}

/// Threshold flags for `extract`; unset ones fall back to the config.
#[derive(Debug, Default, Clone)]
pub struct ThresholdArgs {
    pub ens_top: Option<f64>,
    pub bnd_bottom: Option<f64>,
    pub priv_bottom: Option<f64>,
    pub other_top: Option<f64>,
    pub top: Option<f64>,
}

pub fn extract(cfg: &RunConfig, out: &mut Outputs, set: &SetName, table: &Option<PathBuf>, th: &ThresholdArgs) -> anyhow::Result<()> {
    let t = read_table(&table_path(cfg, table), out)?;
    let e = &cfg.extract;
    let result = match set {
        SetName::MemorizedExceptions => extract_memorized_exceptions(
            &t,
            th.ens_top.unwrap_or(e.ens_top),
            th.bnd_bottom.unwrap_or(e.bnd_bottom),
            th.priv_bottom.unwrap_or(e.priv_bottom),
        ),
        SetName::UncommonSubmodes => extract_uncommon_submodes(
            &t,
            th.priv_bottom.unwrap_or(e.submode_priv_bottom),
            th.other_top.unwrap_or(e.submode_other_top),
        ),
        SetName::CanonicalPrototypes => extract_canonical_prototypes(&t, th.top.unwrap_or(e.prototype_top)),
        SetName::Custom(name) => bad_config!("unknown example set {name}"),
    };
    let set_out = match result {
        Err(protoscope::Error::Contract(msg)) if msg.contains("percentage") => bad_config!("{msg}"),
        r => r?,
    };
    out.file(format!("{set}.csv"), |b| set_out.write_csv(b, &t))?;
    println!("{set}: {} of {} examples", set_out.len(), t.len());
    Ok(())
}

/// Ranking of the training data, read from a table when given and computed otherwise.
fn ranking(ds: &LabeledDataset, cfg: &RunConfig, metric: &Metric, table: &Option<PathBuf>, out: &mut Outputs) -> anyhow::Result<Vec<u32>> {
    let t = match table {
        Some(p) => read_table(p, out)?,
        None => score_table(ds, cfg, &ScoreTargetArg::One(metric.clone()))?,
    };
    Ok(t.ranking(metric)?)
}

fn count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CurriculumKind {
    Window,
    Prefix,
    Noise,
}

fn curve_name(curve: Curve, scope: EvalScope) -> String {
    let c = match curve {
        Curve::Window => "window",
        Curve::Prefix => "prefix",
        Curve::Suffix => "suffix",
    };
    let s = match scope {
        EvalScope::FullTest => "full",
        EvalScope::TopHalfTest => "top_half",
    };
    format!("curriculum_{c}_{s}.csv")
}

/// Scores held-out points with models trained on `ds`, for the restricted test scope.
fn score_test(ds: &LabeledDataset, test: &LabeledDataset, cfg: &RunConfig, metric: &Metric) -> anyhow::Result<ScoreTable> {
    let p = &cfg.pipeline;
    let col = match metric {
        Metric::Adv => score_adv(&train_baseline(ds, p)?, test, &p.attack_for(ds))?,
        Metric::Agr => score_agr(&build_ensemble(ds, &p.ensemble)?, test)?,
        Metric::Conf => score_conf(&build_ensemble(ds, &p.ensemble)?, test)?,
        other => bad_config!("the restricted test scope supports adv, agr or conf rankings, not {other}"),
    };
    Ok(assemble_table(vec![col])?)
}

pub fn curriculum(cfg: &RunConfig, out: &mut Outputs, kind: CurriculumKind, table: &Option<PathBuf>) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let test = load_test(cfg, out)?;
    let c = &cfg.curriculum;
    let rank = ranking(&ds, cfg, &c.metric, table, out)?;
    let spec = cfg.pipeline.model_spec(&ds)?;
    let train_cfg = &cfg.pipeline.train;
    let n = ds.len();
    match kind {
        CurriculumKind::Window => {
            let r = curriculum_window_experiment(&ds, &rank, count(c.window_fraction, n), count(c.stride_fraction, n), &spec, train_cfg, &test)?;
            out.file(curve_name(r.curve, r.eval_scope), |b| r.write_csv(b))?;
            println!("window accuracies {:?}", r.accuracy);
        }
        CurriculumKind::Prefix => {
            let mut sizes: Vec<usize> = c.prefix_fractions.iter().map(|&f| count(f, n)).collect();
            sizes.dedup();
            let test_table = score_test(&ds, &test, cfg, &c.metric)?;
            let top = top_half_test(&test, &test_table, &c.metric)?;
            let targets = [EvalTarget { scope: EvalScope::FullTest, data: &test }, EvalTarget { scope: EvalScope::TopHalfTest, data: &top }];
            let results = curriculum_prefix_suffix_experiment(&ds, &rank, &sizes, &spec, train_cfg, &targets)?;
            for r in &results {
                out.file(curve_name(r.curve, r.eval_scope), |b| r.write_csv(b))?;
                println!("{}: {:?}", curve_name(r.curve, r.eval_scope), r.accuracy);
            }
        }
        CurriculumKind::Noise => {
            let r = label_noise_ablation(
                &ds,
                &rank,
                c.noise_fraction,
                c.noise_seed,
                count(c.window_fraction, n),
                count(c.stride_fraction, n),
                &spec,
                train_cfg,
                &test,
            )?;
            out.file("noise_ablation.csv", |b| r.write_csv(b))?;
            println!("mean accuracy drop {:.4}", r.mean_delta());
        }
    }
    Ok(())
}

pub fn robustness(cfg: &RunConfig, out: &mut Outputs, table: &Option<PathBuf>) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let test = load_test(cfg, out)?;
    let r = &cfg.robustness;
    let rank = ranking(&ds, cfg, &r.metric, table, out)?;
    let n = ds.len();
    let size = count(r.slice_fraction, n);
    let offsets: Vec<usize> = r.offset_fractions.iter().map(|&f| ((f * n as f64).round() as usize).min(n - size)).collect();
    let eval = test.select(&(0..r.eval_size.min(test.len())).collect::<Vec<_>>());
    let mut attack = cfg.pipeline.attack.clone();
    attack.norm = r.norm;
    let attack = if cfg.pipeline.eps_from_box { attack.with_box_diameter(&ds) } else { attack };
    let report = robustness_by_slice(&ds, &rank, size, &offsets, &cfg.pipeline.model_spec(&ds)?, &cfg.pipeline.train, &attack, &eval)?;
    out.file("robustness.csv", |b| report.write_csv(b))?;
    for s in report.slices.iter().chain(std::iter::once(&report.baseline)) {
        println!("{:>9} mean distance {:.4} unreachable {}", s.axis.map_or("baseline".into(), |a| format!("{a}")), s.mean_distance, s.unreachable);
    }
    Ok(())
}

pub fn loo(cfg: &RunConfig, out: &mut Outputs, table: &Option<PathBuf>) -> anyhow::Result<()> {
    let ds = load_dataset(cfg, out)?;
    let test = load_test(cfg, out)?;
    let l = &cfg.loo;
    let candidates = if l.candidates.is_empty() {
        ranking(&ds, cfg, &l.metric, table, out)?.into_iter().take(l.n_candidates).collect()
    } else {
        l.candidates.clone()
    };
    let unique: HashSet<u32> = candidates.iter().copied().collect();
    if unique.len() != candidates.len() {
        bad_config!("loo.candidates contains duplicates");
    }
    let report = leave_one_out_influence(&ds, &candidates, &test, &cfg.pipeline.model_spec(&ds)?, &cfg.pipeline.train, l.replicates)?;
    out.file("loo.csv", |b| report.write_csv(b))?;
    out.file("loo_deltas.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["id", "test_id", "mean_abs_prediction_delta"])?;
        for e in &report.entries {
            for (tid, d) in test.ids().iter().zip(&e.prediction_deltas) {
                w.write_record([e.id.to_string(), tid.to_string(), d.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    for e in &report.entries {
        println!("id {} t {:.3} p {:.4}", e.id, e.t_statistic, e.p_value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_target_parsing() {
        assert_eq!("all".parse::<ScoreTargetArg>().unwrap(), ScoreTargetArg::All);
        assert_eq!("priv".parse::<ScoreTargetArg>().unwrap(), ScoreTargetArg::One(Metric::Priv));
        assert!("bogus".parse::<ScoreTargetArg>().is_err());
    }

    #[test]
    fn counts_are_clamped() {
        assert_eq!(count(0.1, 2000), 200);
        assert_eq!(count(1e-9, 10), 1);
        assert_eq!(count(1.0, 7), 7);
    }
}
