//! `protoscope`: score every example of a dataset by five prototypicality
//! metrics and run the analyses built on them.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use protoscope::analysis::{CorrelationMethod, SetName};
use protoscope::Metric;

use commands::{BadConfig, CurriculumKind, ScoreTargetArg, ThresholdArgs};
use config::{Overrides, RunConfig};
use output::Outputs;

#[derive(Debug, Parser)]
#[command(name = "protoscope", version, about = "Prototypicality metrics for labeled datasets")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// `key = value` config file, or a run manifest to reproduce.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every component seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $PROTOSCOPE_OUT or ./protoscope-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// `synthetic`, `idx:<images>,<labels>`, or a CSV path.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Override one config key, e.g. `--set pipeline.train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the synthetic mixture and its clean test set to CSV.
    Generate,
    /// Train the baseline model.
    Train,
    /// Train the ensemble used by `agr` and `conf`.
    Ensemble,
    /// Train the privacy ladder used by `priv`.
    Ladder,
    /// Score every example; writes a score table.
    Score {
        /// A metric name (adv, ret, agr, conf, priv, boundary, ensemble) or `all`.
        target: ScoreTargetArg,
    },
    /// Pairwise correlations of a score table's percentile columns.
    Correlate {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value = "spearman")]
        method: CorrelationMethod,
        /// Restrict to these metrics (comma separated).
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<Metric>,
    },
    /// Extract a named example set from a score table.
    Extract {
        #[arg(value_name = "SET")]
        example_set: SetName,
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        thresholds: ThresholdFlags,
    },
    /// Train on ranking windows, prefixes, or with injected label noise.
    Curriculum {
        #[arg(value_enum)]
        kind: CurriculumKind,
        /// Score table supplying the ranking; computed when absent.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        window_fraction: Option<f64>,
    },
    /// Adversarial robustness of models trained on ranking slices.
    Robustness {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        slice_fraction: Option<f64>,
    },
    /// Leave-one-out influence of the given (or lowest ranked) examples.
    Loo {
        #[arg(long)]
        table: Option<PathBuf>,
        /// Ids to leave out (comma separated).
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<u32>,
        #[arg(long)]
        replicates: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct ThresholdFlags {
    #[arg(long)]
    ens_top: Option<f64>,
    #[arg(long)]
    bnd_bottom: Option<f64>,
    #[arg(long)]
    priv_bottom: Option<f64>,
    #[arg(long)]
    other_top: Option<f64>,
    #[arg(long)]
    top: Option<f64>,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Generate => "generate".into(),
            Command::Train => "train".into(),
            Command::Ensemble => "ensemble".into(),
            Command::Ladder => "ladder".into(),
            Command::Score { target: ScoreTargetArg::All } => "score_all".into(),
            Command::Score { target: ScoreTargetArg::One(m) } => format!("score_{m}"),
            Command::Correlate { .. } => "correlate".into(),
            Command::Extract { example_set, .. } => format!("extract_{example_set}"),
            Command::Curriculum { kind, .. } => format!("curriculum_{}", format!("{kind:?}").to_lowercase()),
            Command::Robustness { .. } => "robustness".into(),
            Command::Loo { .. } => "loo".into(),
        }
    }

    /// Command-specific flags folded into the config so manifests record them.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Curriculum { window_fraction: Some(w), .. } => {
                cfg.curriculum.window_fraction = *w;
                cfg.curriculum.stride_fraction = *w;
            }
            Command::Robustness { slice_fraction: Some(s), .. } => cfg.robustness.slice_fraction = *s,
            Command::Loo { candidates, replicates, .. } => {
                if !candidates.is_empty() {
                    cfg.loo.candidates = candidates.clone();
                }
                if let Some(r) = replicates {
                    cfg.loo.replicates = *r;
                }
            }
            _ => {}
        }
    }
}

fn run(cli: Cli, argv: &[String]) -> anyhow::Result<()> {
    let g = &cli.global;
    let overrides = Overrides { config: g.config.clone(), seed: g.seed, out: g.out.clone(), dataset: g.dataset.clone(), set: g.set.clone() };
    let mut cfg = config::resolve(&overrides).map_err(|e| BadConfig(format!("{e:#}")))?;
    cli.command.apply(&mut cfg);
    if g.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = g.jobs {
        if j == 0 {
            return Err(BadConfig("--jobs must be positive".into()).into());
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().context("building worker pool")?;

    let mut out = Outputs::default();
    pool.install(|| -> anyhow::Result<()> {
        match &cli.command {
            Command::Generate => commands::generate(&cfg, &mut out),
            Command::Train => commands::train(&cfg, &mut out),
            Command::Ensemble => commands::ensemble(&cfg, &mut out),
            Command::Ladder => commands::ladder(&cfg, &mut out),
            Command::Score { target } => commands::score(&cfg, &mut out, target),
            Command::Correlate { table, method, metrics } => commands::correlate(&cfg, &mut out, table, *method, metrics),
            Command::Extract { example_set, table, thresholds: t } => {
                let th = ThresholdArgs { ens_top: t.ens_top, bnd_bottom: t.bnd_bottom, priv_bottom: t.priv_bottom, other_top: t.other_top, top: t.top };
                commands::extract(&cfg, &mut out, example_set, table, &th)
            }
            Command::Curriculum { kind, table, .. } => commands::curriculum(&cfg, &mut out, *kind, table),
            Command::Robustness { table, .. } => commands::robustness(&cfg, &mut out, table),
            Command::Loo { table, .. } => commands::loo(&cfg, &mut out, table),
        }
    })?;
    for path in out.commit(&cfg, argv, &cli.command.name())? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

/// Exit code 1 for configuration problems (including training divergence,
/// which a config change fixes), 2 for invalid or missing inputs.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<BadConfig>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<protoscope::Error>()) {
        Some(protoscope::Error::Diverged { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    // The manifest records the command without the flags that only choose
    // where or how fast to run, so it replays anywhere.
    let command = replay_args(&argv);
    match run(cli, &command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn replay_args(argv: &[String]) -> Vec<String> {
    const DROP_WITH_VALUE: [&str; 3] = ["--out", "--jobs", "--config"];
    let mut kept = Vec::new();
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if DROP_WITH_VALUE.contains(&a.as_str()) {
            skip = true;
            continue;
        }
        if DROP_WITH_VALUE.iter().any(|f| a.starts_with(&format!("{f}="))) {
            continue;
        }
        kept.push(a.clone());
    }
    kept
}
