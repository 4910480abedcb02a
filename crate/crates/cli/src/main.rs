//! `prefinfer`: demonstration-based preference inference pipeline.

mod config;
mod error;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefinfer_core::env::PreferenceWeights;
use prefinfer_core::experiments::{Report, ReportFormat};
use prefinfer_core::scenarios::Schedule;

use crate::config::{RunConfig, DEFAULT_OUT_DIR};
use crate::error::CliError;
use crate::pipeline::{Layout, Pipeline};

#[derive(Parser)]
#[command(name = "prefinfer", version, about = "Infer a user's preference weights from appliance-usage demonstrations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON). Defaults to <out>/config.json when present.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR", env = "PREFINFER_OUT")]
    out: Option<PathBuf>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Output format for printed results and `report`.
    #[arg(long, global = true, value_name = "FORMAT", default_value = "markdown", value_parser = parse_format)]
    format: ReportFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Data helpers.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Train the weight-conditioned agent on the training day.
    TrainAgent,
    /// Roll the agent out over the weight grid to build the demonstration dataset.
    GenDemos,
    /// Fit the inference model on the demonstration dataset.
    TrainDwpi,
    /// Infer weights for a schedule, or round-trip given weights through the agent.
    Infer {
        /// Hours the user runs the appliance, e.g. 2,3.
        #[arg(long, value_name = "H1,H2", conflicts_with = "weights", required_unless_present = "weights")]
        schedule: Option<String>,
        /// Weights for the agent to demonstrate, e.g. 0.3,0.7.
        #[arg(long, value_name = "W_COST,W_COMF")]
        weights: Option<String>,
    },
    /// Infer weights for the built-in users and check the expected pattern.
    Validate,
    /// Deploy agents with the inferred weights over the evaluation week.
    Compare {
        /// Compare a custom schedule instead of the built-in users (printed only).
        #[arg(long, value_name = "H1,H2")]
        schedule: Option<String>,
        /// Weights for the custom schedule; inferred when omitted.
        #[arg(long, value_name = "W_COST,W_COMF", requires = "schedule")]
        weights: Option<String>,
    },
    /// Assemble validation and comparison results into one report.
    Report,
    /// Run every stage in order.
    RunAll {
        /// Repeat the pipeline for consecutive seeds, each in its own subdirectory.
        #[arg(long, default_value_t = 1, value_name = "N")]
        repeat: u64,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Write the default configuration.
    Init,
}

#[derive(Subcommand)]
enum DataAction {
    /// Build the training day and evaluation week.
    Prepare,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: prefinfer_core::experiments::ExperimentError| e.to_string())
}

fn parse_weights(s: &str) -> Result<PreferenceWeights, CliError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("--weights expects W_COST,W_COMF summing to 1, got `{s}`"));
    let [a, b] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    PreferenceWeights::new(a, b).map_err(|_| bad())
}

fn parse_schedule(s: &str) -> Result<Schedule, CliError> {
    Schedule::parse_hours("custom", s).map_err(|e| CliError::Usage(e.to_string()))
}

fn weight_pair(w: PreferenceWeights, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => format!("{{\"w_cost\": {}, \"w_comf\": {}}}", w.w_cost(), w.w_comf()),
        ReportFormat::Markdown => format!("[{:.4}, {:.4}]", w.w_cost(), w.w_comf()),
    }
}

/// Config precedence: explicit --config, then <out>/config.json, then defaults.
fn resolve(global: &Global) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let candidate = Layout::new(global.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))).config();
            if candidate.exists() {
                RunConfig::load(&candidate)?
            } else {
                RunConfig::default()
            }
        }
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    let out = global.out.clone().unwrap_or_else(|| config.out_dir.clone());
    config.validate()?;
    Ok((config, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let (config, out) = resolve(g)?;
    let format = g.format;
    let pipeline = Pipeline::new(config, &out, g.force);
    match cli.command {
        Command::Config {
            action: ConfigAction::Init,
        } => {
            let path = g.config.clone().unwrap_or_else(|| pipeline.layout.config());
            let mut config = pipeline.config.clone();
            config.out_dir = out.clone();
            Pipeline::new(config, &out, g.force).config_init(&path)?;
            println!("{}", path.display());
        }
        Command::Data {
            action: DataAction::Prepare,
        } => {
            let (train, eval) = pipeline.data_prepare()?;
            println!("training days {}, evaluation days {}", train.days, eval.days);
        }
        Command::TrainAgent => {
            pipeline.train_agent()?;
            println!("{}", pipeline.layout.agent_model().display());
        }
        Command::GenDemos => {
            let n = pipeline.gen_demos()?;
            println!("{n} demonstrations");
        }
        Command::TrainDwpi => {
            let mse = pipeline.train_dwpi()?;
            println!("training mse {mse:.6}");
        }
        Command::Infer { schedule, weights } => {
            let (_, w) = match (schedule, weights) {
                (Some(s), _) => pipeline.infer_schedule(&parse_schedule(&s)?)?,
                (None, Some(w)) => pipeline.infer_round_trip(parse_weights(&w)?)?,
                (None, None) => return Err(CliError::Usage("pass --schedule or --weights".into())),
            };
            println!("{}", weight_pair(w, format));
        }
        Command::Validate => {
            let report = pipeline.validate()?;
            print!("{}", report.render(format));
        }
        Command::Compare { schedule: None, .. } => {
            let report = pipeline.compare()?;
            print!("{}", report.render(format));
        }
        Command::Compare {
            schedule: Some(s),
            weights,
        } => {
            let schedule = parse_schedule(&s)?;
            let w = match weights {
                Some(w) => parse_weights(&w)?,
                None => pipeline.infer_schedule(&schedule)?.1,
            };
            let report = pipeline.comparison_for(&[(schedule, w)])?;
            print!("{}", report.render(format));
        }
        Command::Report => {
            let (_, text) = pipeline.report(format)?;
            print!("{text}");
        }
        Command::RunAll { repeat } => {
            if repeat == 0 {
                return Err(CliError::Usage("--repeat must be at least 1".into()));
            }
            if repeat == 1 {
                let (_, text) = pipeline.run_all(format)?;
                print!("{text}");
            } else {
                run_repeated(&pipeline, &out, repeat, format)?;
            }
        }
    }
    Ok(())
}

/// Runs seeds `seed..seed + repeat` into `<out>/seed-<n>` and prints how many
/// passed each check.
fn run_repeated(base: &Pipeline, out: &Path, repeat: u64, format: ReportFormat) -> Result<(), CliError> {
    let mut validation_pass = 0;
    let mut comparison_pass = 0;
    for k in 0..repeat {
        let mut config = base.config.clone();
        config.seed = base.config.seed + k;
        let dir = out.join(format!("seed-{}", config.seed));
        let seed = config.seed;
        let p = Pipeline::new(config, dir, base.force);
        p.run_all(format)?;
        let v = p.validation_from_disk()?;
        let c = p.comparison_from_disk()?;
        let v_ok = v.checks.is_some_and(|c| c.all());
        let c_ok = c.checks.is_some_and(|c| c.all());
        validation_pass += usize::from(v_ok);
        comparison_pass += usize::from(c_ok);
        println!("seed {seed}: validation {}, comparison {}", verdict(v_ok), verdict(c_ok));
    }
    println!("validation passed {validation_pass}/{repeat}, comparison passed {comparison_pass}/{repeat}");
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
