use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use relgraph::commands::{self, CheckFailure, EvalArgs, GradcheckArgs, TrainArgs};
use relgraph::config::{self, Preset, RunConfig, CONFIG_ENV};
use relgraph::io;
use relgraph_core::features::RelationRule;

/// Question-conditioned graph attention for scene-text question answering.
///
/// Exit codes: 0 success, 1 a check failed, 2 usage or validation error.
#[derive(Parser)]
#[command(name = "relgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance file with one planted relation.
    Gen {
        /// Relation rule: `to` (text inside the largest object), `tt`
        /// (text nearest the marked text) or `ot` (text right of the object).
        #[arg(long)]
        rule: RelationRule,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with teacher forcing and write a checkpoint plus a loss log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML run config; the desk preset when absent.
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_ckpt: PathBuf,
        #[arg(long)]
        steps: u64,
        /// Loss log path; defaults to `<out-ckpt>.loss.csv`.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Continue from a checkpoint (parameters, optimizer state, step).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode every instance and report metrics as JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated subset of accuracy, anls, ocr_ub.
        #[arg(long, default_value = "accuracy,anls,ocr_ub")]
        metrics: String,
        #[arg(long, default_value_t = 0.5)]
        anls_tau: f64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-instance predictions as JSON lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Decoding threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Dump question, node and edge attention plus the decode trace of one instance.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        instance_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient of the full model.
    Gradcheck {
        /// Run config whose `[model]` table replaces the built-in d=8 check model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe at most this many coordinates per parameter block.
        #[arg(long)]
        max_coords: Option<usize>,
        /// Doubles the analytic gradient of the named block.
        #[arg(long, hide = true)]
        corrupt_block: Option<String>,
    },
    /// Print a preset run config as TOML.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// OCR detection precision, recall and hmean.
    OcrEval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// A pair matches when its IoU exceeds this value.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

fn emit(text: &str, out: Option<&std::path::Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Usage line of the named subcommand, or of the whole tool.
fn usage_for(sub: Option<&str>) -> clap::builder::StyledStr {
    let mut cmd = Cli::command();
    cmd.build();
    match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(c) => c.render_usage(),
        None => cmd.render_usage(),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { rule, count, seed, out } => commands::gen(rule, count, seed, &out),
        Command::Train { data, config, out_ckpt, steps, loss_log, resume } => {
            let cfg = RunConfig::resolve(config.as_deref())?;
            let outcome = commands::train(&TrainArgs {
                data: &data,
                config: &cfg,
                out_ckpt: &out_ckpt,
                steps,
                loss_log: loss_log.as_deref(),
                resume: resume.as_deref(),
            })?;
            println!("{}", outcome.hash);
            Ok(())
        }
        Command::Eval { data, ckpt, metrics, anls_tau, out, predictions, jobs } => {
            let metrics = config::parse_metric_list(&metrics)?;
            let report = commands::eval(&EvalArgs {
                data: &data,
                ckpt: &ckpt,
                metrics: &metrics,
                anls_tau,
                out: out.as_deref(),
                predictions: predictions.as_deref(),
                jobs,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Inspect { data, ckpt, instance_id, out } => {
            emit(&commands::inspect(&data, &ckpt, &instance_id)?, out.as_deref())
        }
        Command::Gradcheck { config, seed, max_coords, corrupt_block } => {
            let model = config.as_deref().map(RunConfig::load).transpose()?.map(|c| c.model);
            match commands::gradcheck(&GradcheckArgs { model, seed, max_coords, corrupt: corrupt_block.as_deref() }) {
                Ok(text) => {
                    print!("{text}");
                    Ok(())
                }
                Err(e) => {
                    if let Some(f) = e.downcast_ref::<CheckFailure>() {
                        print!("{f}");
                    }
                    Err(e)
                }
            }
        }
        Command::Config { preset, out } => emit(&RunConfig::preset(preset).to_toml()?, out.as_deref()),
        Command::OcrEval { pred, gt, iou } => {
            let report = commands::ocr_eval(&pred, &gt, iou)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            }
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            if code == 1 {
                eprintln!("error: check failed");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
