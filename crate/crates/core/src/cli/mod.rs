//! Command-line surface. Every command reads one flat TOML file; flags given
//! on the command line override it.

mod config;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::corpus::write_dataset;
use crate::error::{Error, Result};
use crate::retrieval::RetrieverId;
use crate::ropg::Algorithm;
use crate::selection::Mode;

pub use config::RunConfig;
pub use pipeline::{
    load_data, read_report, render_summary, write_json, DatasetSummary, EvalReport, EvalTarget, Experiment,
    InstanceRow, RopgRun, RspgRun,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_GENERATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "personal-rag", version, about = "Retriever training and selection for personalized generation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on concurrent generator calls and other parallel work.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the dataset and print its statistics.
    Ingest,
    /// Generate the planted synthetic benchmark and write it in LaMP layout.
    Synth,
    /// Train a dense retriever from downstream feedback.
    TrainRopg {
        #[arg(long, default_value = "kd")]
        algo: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the retriever selection model.
    TrainRspg {
        #[arg(long, default_value = "post")]
        mode: String,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score one retriever, selector or the oracle bounds on the held-out split.
    Eval {
        #[arg(long, conflicts_with_all = ["selector", "oracle"])]
        retriever: Option<String>,
        /// rspg-pre, rspg-post, rrf or qpp:<wig|nqc|sigma_max|sigma_50>
        #[arg(long, conflicts_with = "oracle")]
        selector: Option<String>,
        #[arg(long)]
        oracle: bool,
    },
    /// Collect saved evaluation reports into one table.
    Report,
}

/// Exit code for an error, by kind.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidSpec(_) => EXIT_USAGE,
        Error::Generation { .. } => EXIT_GENERATION,
        _ => EXIT_DATA,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(w) = common.workers {
        config.workers = Some(w);
    }
    if let Some(d) = &common.cache_dir {
        config.cache_dir = Some(d.clone());
    }
    if let Some(d) = &common.out_dir {
        config.out_dir = d.clone();
    }
    Ok(config)
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command and returns what it would print.
pub fn execute(cli: Cli) -> Result<String> {
    let mut config = load_config(&cli.common)?;
    match &cli.command {
        Command::TrainRopg { epochs: Some(n), .. } => config.ropg_epochs = *n,
        Command::TrainRspg { epochs: Some(n), .. } => config.rspg_epochs = *n,
        _ => {}
    }
    config.validate()?;
    match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| dispatch(&cli.command, config)),
        None => dispatch(&cli.command, config),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn dispatch(command: &Command, config: RunConfig) -> Result<String> {
    match command {
        Command::Synth => {
            if config.task != crate::corpus::TaskKind::Synthetic {
                return Err(Error::Config("synth needs task = \"synthetic\"".into()));
            }
            let bench = crate::corpus::generate_synthetic(&config.synthetic_spec()?)?;
            let dir = config.out_dir.join("data");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_dataset(&bench.dataset, &dir.join("questions.json"), &dir.join("outputs.json"))?;
            write_json(&dir.join("synonyms.json"), &bench.synonyms)?;
            let planted: Vec<_> = bench
                .dataset
                .instances
                .iter()
                .map(|i| (i.instance_id.clone(), i.planted.clone()))
                .collect();
            write_json(&dir.join("planted.json"), &planted)?;
            let exp = Experiment::open(config)?;
            Ok(json(&exp.summary()))
        }
        Command::Ingest => {
            let exp = Experiment::open(config)?;
            let summary = exp.summary();
            write_json(&exp.config.report_dir().join("dataset.json"), &summary)?;
            Ok(json(&summary))
        }
        Command::TrainRopg { algo, .. } => {
            let algo: Algorithm = algo.parse()?;
            let exp = Experiment::open(config)?;
            let run = exp.train_ropg(algo)?;
            let last = run.output.epochs.last().expect("epoch 0 record");
            Ok(format!(
                "{}\ntrained on {} instances ({} skipped); expected reward {:.4}\n",
                run.checkpoint.display(),
                run.examples,
                run.skipped,
                last.expected_reward
            ))
        }
        Command::TrainRspg { mode, .. } => {
            let mode: Mode = mode.parse()?;
            let exp = Experiment::open(config)?;
            let run = exp.train_rspg(mode)?;
            Ok(format!(
                "{}\ntrained on {} instances ({} dropped); final loss {:.5}\n",
                run.checkpoint.display(),
                run.examples,
                run.dropped,
                run.output.epoch_losses.last().copied().unwrap_or(f64::NAN)
            ))
        }
        Command::Eval {
            retriever,
            selector,
            oracle,
        } => {
            let target = match (retriever, selector, oracle) {
                (Some(r), _, _) => EvalTarget::Retriever(r.parse::<RetrieverId>()?),
                (None, Some(s), _) => EvalTarget::parse_selector(s)?,
                (None, None, true) => EvalTarget::Oracle,
                (None, None, false) => {
                    return Err(Error::Config("eval needs --retriever, --selector or --oracle".into()))
                }
            };
            let exp = Experiment::open(config)?;
            let report = exp.eval(target)?;
            let path = exp.config.report_dir().join(format!("eval-{}.json", report.name));
            write_json(&path, &report)?;
            let mut out = format!("{}\n", path.display());
            out.push_str(&render_summary(std::slice::from_ref(&report)));
            Ok(out)
        }
        Command::Report => {
            let dir = config.report_dir();
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("eval-") && n.ends_with(".json"))
                })
                .collect();
            paths.sort();
            let reports = paths.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            let table = render_summary(&reports);
            let path = dir.join("summary.md");
            std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
            Ok(table)
        }
    }
}
