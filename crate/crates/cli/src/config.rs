//! Run configuration: defaults, `key = value` files, manifests and flag overrides.
//!
//! Resolution order: built-in defaults reseeded from the master seed, then the
//! config file, then `--set` pairs, then dedicated flags. Loading a run
//! manifest instead of a config file restores its resolved config verbatim.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use protoscope::attacks::Norm;
use protoscope::pipeline::{derive_seed, presets, PipelineConfig};
use protoscope::{GenConfig, Metric};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetConfig {
    /// Examples per class in the synthetic test draw.
    pub n_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub ens_top: f64,
    pub bnd_bottom: f64,
    pub priv_bottom: f64,
    pub submode_priv_bottom: f64,
    pub submode_other_top: f64,
    pub prototype_top: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            ens_top: 25.0,
            bnd_bottom: 50.0,
            priv_bottom: 50.0,
            submode_priv_bottom: 25.0,
            submode_other_top: 50.0,
            prototype_top: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Metric whose ranking orders the training data.
    pub metric: Metric,
    /// Window size as a fraction of the dataset.
    pub window_fraction: f64,
    /// Window stride as a fraction of the dataset.
    pub stride_fraction: f64,
    /// Prefix and suffix sizes as fractions of the dataset, ascending.
    pub prefix_fractions: Vec<f64>,
    pub noise_fraction: f64,
    pub noise_seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Adv,
            window_fraction: 0.1,
            stride_fraction: 0.1,
            prefix_fractions: vec![0.05, 0.1, 0.25, 0.5, 0.75, 1.0],
            noise_fraction: 0.1,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub metric: Metric,
    pub slice_fraction: f64,
    /// Slice starts as fractions of the dataset.
    pub offset_fractions: Vec<f64>,
    pub norm: Norm,
    /// Number of test points attacked per model.
    pub eval_size: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { metric: Metric::Adv, slice_fraction: 0.25, offset_fractions: vec![0.0, 0.75], norm: Norm::Linf, eval_size: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LooConfig {
    /// Ids to leave out. When empty, the `n_candidates` lowest ranked by `metric` are used.
    pub candidates: Vec<u32>,
    pub n_candidates: usize,
    pub metric: Metric,
    pub replicates: usize,
}

impl Default for LooConfig {
    fn default() -> Self {
        Self { candidates: Vec::new(), n_candidates: 3, metric: Metric::Adv, replicates: 5 }
    }
}

/// Everything a command needs. Serialized verbatim into every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// `synthetic`, `idx:<images>,<labels>`, or a CSV path (optionally `csv:<path>`).
    pub dataset: String,
    /// Evaluation data for experiments; `synthetic` draws a clean test set
    /// matching `generate`.
    pub test_dataset: String,
    pub generate: GenConfig,
    pub test: TestSetConfig,
    pub pipeline: PipelineConfig,
    pub extract: ExtractConfig,
    pub curriculum: CurriculumConfig,
    pub robustness: RobustnessConfig,
    pub loo: LooConfig,
}

impl RunConfig {
    /// Defaults with every seed derived from `seed`.
    pub fn seeded(seed: u64, out: PathBuf) -> Self {
        Self {
            seed,
            out,
            dataset: "synthetic".into(),
            test_dataset: "synthetic".into(),
            generate: presets::standard(seed),
            test: TestSetConfig { n_per_class: 250, seed: derive_seed(seed, 7) },
            pipeline: PipelineConfig::default().reseeded(seed),
            extract: ExtractConfig::default(),
            curriculum: CurriculumConfig { noise_seed: derive_seed(seed, 8), ..CurriculumConfig::default() },
            robustness: RobustnessConfig::default(),
            loo: LooConfig::default(),
        }
    }

    pub fn test_gen(&self) -> GenConfig {
        presets::test_split(&self.generate, self.test.seed, self.test.n_per_class)
    }
}

/// Where dataset rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Idx { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
}

impl DatasetSource {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        if s == "synthetic" {
            return Ok(Self::Synthetic);
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let Some((images, labels)) = rest.split_once(',') else {
                bail!("idx source must be idx:<images>,<labels>, got {s:?}");
            };
            return Ok(Self::Idx { images: images.into(), labels: labels.into() });
        }
        let path = s.strip_prefix("csv:").unwrap_or(s);
        if path.is_empty() {
            bail!("empty dataset path");
        }
        Ok(Self::Csv(path.into()))
    }
}

/// Overrides collected from the command line.
#[derive(Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dataset: Option<String>,
    /// `key.path=value` pairs, values in TOML syntax (bare words are strings).
    pub set: Vec<String>,
}

/// The config file parsed into a JSON tree, and whether it was a manifest.
fn load_file(path: &Path) -> anyhow::Result<(Value, bool)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let Some(config) = v.get("config") else {
            bail!("{} is JSON but has no \"config\" field", path.display());
        };
        return Ok((config.clone(), true));
    }
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    Ok((serde_json::to_value(table)?, false))
}

/// Overlays `patch` on `base`, rejecting keys the schema does not have.
/// Below a `null` (an unset optional section) anything goes; serde checks it.
fn merge(base: &mut Value, patch: Value, path: &str) -> anyhow::Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => bail!("unknown config key {key:?}"),
                }
            }
        }
        (slot, v) => *slot = v,
    }
    Ok(())
}

/// Parses one `a.b.c=value` pair into a nested JSON patch.
fn parse_assignment(pair: &str) -> anyhow::Result<Value> {
    let Some((key, raw)) = pair.split_once('=') else {
        bail!("override {pair:?} is not key=value");
    };
    let key = key.trim();
    if key.is_empty() {
        bail!("override {pair:?} has an empty key");
    }
    let raw = raw.trim();
    let value: Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => serde_json::to_value(&t["v"])?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok(key.split('.').rev().fold(value, |acc, part| {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    }))
}

pub fn default_out() -> PathBuf {
    std::env::var_os("PROTOSCOPE_OUT").map_or_else(|| PathBuf::from("protoscope-out"), PathBuf::from)
}

/// Builds the effective config from defaults, file and overrides.
pub fn resolve(o: &Overrides) -> anyhow::Result<RunConfig> {
    let (file, is_manifest) = match &o.config {
        Some(p) => load_file(p)?,
        None => (Value::Object(Default::default()), false),
    };
    let patches = o.set.iter().map(|s| parse_assignment(s)).collect::<anyhow::Result<Vec<_>>>()?;

    let mut tree = if is_manifest {
        let mut cfg: RunConfig = serde_json::from_value(file).context("manifest config does not match the schema")?;
        if let Some(seed) = o.seed {
            cfg = reseed(cfg, seed);
        }
        serde_json::to_value(cfg)?
    } else {
        let seed = match (o.seed, file.get("seed")) {
            (Some(s), _) => s,
            (None, Some(v)) => v.as_u64().context("seed must be a non-negative integer")?,
            (None, None) => 0,
        };
        let mut tree = serde_json::to_value(RunConfig::seeded(seed, default_out()))?;
        merge(&mut tree, file, "")?;
        tree
    };
    for p in patches {
        merge(&mut tree, p, "")?;
    }
    let mut cfg: RunConfig = serde_json::from_value(tree).context("config does not match the schema")?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(d) = &o.dataset {
        cfg.dataset = d.clone();
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn reseed(cfg: RunConfig, seed: u64) -> RunConfig {
    let fresh = RunConfig::seeded(seed, cfg.out.clone());
    RunConfig {
        seed,
        generate: GenConfig { seed, ..cfg.generate },
        test: TestSetConfig { seed: fresh.test.seed, ..cfg.test },
        pipeline: PipelineConfig { seed, ..cfg.pipeline.reseeded(seed) },
        curriculum: CurriculumConfig { noise_seed: fresh.curriculum.noise_seed, ..cfg.curriculum },
        ..cfg
    }
}

fn fraction(name: &str, v: f64) -> anyhow::Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        bail!("{name} must be in (0, 1], got {v}");
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> anyhow::Result<()> {
    DatasetSource::parse(&cfg.dataset)?;
    DatasetSource::parse(&cfg.test_dataset)?;
    cfg.generate.validate()?;
    cfg.pipeline.attack.validate()?;
    cfg.pipeline.ensemble.validate()?;
    cfg.pipeline.ladder.dp.validate()?;
    fraction("curriculum.window_fraction", cfg.curriculum.window_fraction)?;
    fraction("curriculum.stride_fraction", cfg.curriculum.stride_fraction)?;
    fraction("robustness.slice_fraction", cfg.robustness.slice_fraction)?;
    for &f in &cfg.curriculum.prefix_fractions {
        fraction("curriculum.prefix_fractions", f)?;
    }
    if !(0.0..=1.0).contains(&cfg.curriculum.noise_fraction) {
        bail!("curriculum.noise_fraction must be in [0, 1]");
    }
    if cfg.robustness.offset_fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
        bail!("robustness.offset_fractions must lie in [0, 1)");
    }
    if cfg.test.n_per_class == 0 {
        bail!("test.n_per_class must be positive");
    }
    Ok(())
}
