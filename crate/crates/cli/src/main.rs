//! `drm`: convert data, train, evaluate and report on DRM recommenders.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drm_core::experiment::{
    correlate, evaluate_split, group_report, group_report_tsv, load_model_for, run_experiment, ExperimentConfig,
    TraceTable, CORRELATION_SKIP,
};
use drm_core::interactions::{load_interactions, synthetic_low_rank, InputFormat, Split};
use drm_core::metrics::MetricSpec;
use drm_core::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "drm", version, about = "Top-K recommenders with a differentiable ranking-metric loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an interaction file to the canonical pair list.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// `pair-list` or `playlist-json`.
        #[arg(long, default_value = "pair-list")]
        format: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split the data and train `runs` models; any config key can be
    /// overridden with `--key value` or `--section.key value`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        overrides: Vec<String>,
    },
    /// Evaluate a saved model on the test part of a saved split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Comma-separated metrics, e.g. `MAP@10,NDCG@10,Recall@50`.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<MetricSpec>,
        /// Extra cutoffs reported for every default metric family.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Vec<usize>,
    },
    /// Correlate loss columns with metric columns of training traces.
    Correlate {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Restrict to one metric column, e.g. `ndcg@10_val`.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, default_value_t = CORRELATION_SKIP)]
        skip: usize,
    },
    /// NDCG@10 per group of users bucketed by training-interaction count.
    GroupReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Lower edges of the groups, e.g. `5,10,20,50`.
        #[arg(long, value_delimiter = ',', required = true)]
        boundaries: Vec<usize>,
    },
    /// Write a synthetic low-rank dataset as a pair list.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
        /// Positives per user.
        #[arg(long, default_value_t = 20)]
        positives: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Runtime => 3,
        ErrorCategory::Input => 4,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Prints `text` and, with `--out DIR`, also writes it to `DIR/name`.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = out {
        write_file(&dir.join(name), text)?;
    }
    print!("{text}");
    Ok(())
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key value`, found `{flag}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => {
                let value = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for `--{key}`")))?;
                (key.to_owned(), value.clone())
            }
        };
        pairs.push((key.replace('-', "_"), value));
    }
    Ok(pairs)
}

fn load_config(common: &Common, extra: &[String]) -> Result<ExperimentConfig> {
    let mut overrides = parse_overrides(extra)?;
    if let Some(seed) = common.seed {
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("experiment.out".into(), format!("{:?}", out.display().to_string())));
    }
    ExperimentConfig::load(common.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, format, output } => {
            let format: InputFormat = format.parse()?;
            let data = load_interactions(&input, format)?;
            data.write_pair_list(&output)?;
            eprintln!(
                "{} users, {} items, {} interactions -> {}",
                data.num_users(),
                data.num_items(),
                data.nnz(),
                output.display()
            );
        }
        Command::Train { common, overrides } => {
            let config = load_config(&common, &overrides)?;
            let report = run_experiment(&config, |line| eprintln!("{line}"))?;
            print!("{}", report.summary_text());
        }
        Command::Eval {
            common,
            model,
            split,
            metrics,
            cutoffs,
        } => {
            let config = load_config(&common, &[])?;
            let mut specs = if metrics.is_empty() {
                config.experiment.metrics.clone()
            } else {
                metrics
            };
            for k in cutoffs {
                for family in MetricSpec::defaults() {
                    let spec = MetricSpec::new(family.metric, k);
                    if !specs.contains(&spec) {
                        specs.push(spec);
                    }
                }
            }
            let split = Split::load(&split)?;
            let model = load_model_for(&model, &split)?;
            let report = evaluate_split(&model, &split, &specs, config.train.min_train)?;
            emit(common.out.as_deref(), "eval.tsv", &report.to_table())?;
        }
        Command::Correlate {
            common,
            traces,
            metric,
            skip,
        } => {
            let tables = traces
                .iter()
                .map(|p| Ok((p.display().to_string(), TraceTable::load(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = correlate(&tables, metric.as_deref(), skip)?;
            emit(common.out.as_deref(), "correlation.tsv", &report.to_tsv())?;
        }
        Command::GroupReport {
            common,
            model,
            split,
            boundaries,
        } => {
            let config = load_config(&common, &[])?;
            let split = Split::load(&split)?;
            let model = load_model_for(&model, &split)?;
            let rows = group_report(&model, &split, &boundaries, config.train.min_train)?;
            emit(common.out.as_deref(), "groups.tsv", &group_report_tsv(&rows))?;
        }
        Command::Synth {
            common,
            users,
            items,
            rank,
            positives,
        } => {
            if positives == 0 || positives > items || rank == 0 {
                return Err(Error::Config("need 0 < positives <= items and rank > 0".into()));
            }
            let data = synthetic_low_rank(users, items, rank, positives, common.seed.unwrap_or(0));
            let text = data.to_pair_list();
            match &common.out {
                Some(path) => write_file(path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
