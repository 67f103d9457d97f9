use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::json;

use rqopt::harness::{compare_policies, run_and_report, run_scenario, HarnessError};
use rqopt::optimizer::OptimizerConfig;
use rqopt::policies::{Policy, PolicyKind, UnknownPolicy};
use rqopt::quality::{load_quality_dataset, rmse, split_by_location, train_tree_predictor, QualityError, QualityPredictor};
use rqopt::report::{load_trace, serving_state_report, ReportError};
use rqopt::scenario::{ScenarioConfig, ScenarioError};
use rqopt::service::{Service, ServiceConfig, ServiceError};

#[derive(Parser)]
#[command(name = "rqopt", version, about = "Rendering-quality optimizer and GPU-sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario under one policy.
    Run {
        /// Preset name (scenario1..3) or scenario file.
        #[arg(long)]
        scenario: String,
        /// Defaults to the scenario's own policy.
        #[arg(long)]
        policy: Option<String>,
        /// Directory for trace.csv, decisions.jsonl and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several policies on one scenario and compare service quality.
    Compare {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "adrenaline,highest_only,lowest_only,djay")]
        policies: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a tree predictor on a quality CSV, holding out one location.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test_location: String,
        #[arg(long, default_value_t = rqopt::quality::DEFAULT_MAX_DEPTH)]
        max_depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the optimizer as a socket service.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long, default_value = "adrenaline")]
        policy: String,
        #[arg(long)]
        predictor: Option<PathBuf>,
        /// Seconds between timed rounds; 0 runs rounds only on request.
        #[arg(long, default_value_t = 5.0)]
        round_interval_s: f64,
    },
    /// Recompute the serving-state report from a trace file.
    Report {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long, default_value_t = 120.0)]
        fps_upper: f64,
        #[arg(long, default_value_t = 30.0)]
        window_s: f64,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Policy(#[from] UnknownPolicy),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Policy(_) => "policy",
            CliError::Scenario(_) => "scenario",
            CliError::Harness(_) => "run",
            CliError::Report(_) => "report",
            CliError::Quality(_) => "quality",
            CliError::Service(_) => "service",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).expect("stdout json");
    let _ = writeln!(out);
}

fn load_predictor(path: Option<&PathBuf>) -> Result<QualityPredictor, CliError> {
    Ok(match path {
        Some(p) => QualityPredictor::load(p)?,
        None => QualityPredictor::default(),
    })
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { scenario, policy, out } => {
            let cfg = ScenarioConfig::resolve(&scenario)?;
            let policy = match policy {
                Some(p) => p.parse()?,
                None => cfg.policy,
            };
            let result = match out {
                Some(dir) => run_and_report(&cfg, policy, &dir)?,
                None => run_scenario(&cfg, policy)?,
            };
            print_json(&result.report);
        }
        Command::Compare { scenario, policies, out } => {
            let cfg = ScenarioConfig::resolve(&scenario)?;
            let kinds = policies
                .iter()
                .map(|p| p.parse::<PolicyKind>())
                .collect::<Result<Vec<_>, _>>()?;
            if kinds.len() < 2 {
                return Err(CliError::Usage("compare needs at least two policies".into()));
            }
            let (comparison, _) = compare_policies(&cfg, &kinds, out.as_deref())?;
            print_json(&comparison);
        }
        Command::Train {
            data,
            test_location,
            max_depth,
            out,
        } => {
            let samples = load_quality_dataset(&data)?;
            let (train, test) = split_by_location(&samples, &test_location);
            let model = train_tree_predictor(&train, max_depth)?;
            let err = rmse(&model, &test)?;
            model.save(&out)?;
            print_json(&json!({
                "model": out,
                "max_depth": max_depth,
                "train_samples": train.len(),
                "test_samples": test.len(),
                "rmse": err,
            }));
        }
        Command::Serve {
            listen,
            policy,
            predictor,
            round_interval_s,
        } => {
            let kind: PolicyKind = policy.parse()?;
            if !(round_interval_s >= 0.0 && round_interval_s.is_finite()) {
                return Err(CliError::Usage("--round-interval-s must be >= 0".into()));
            }
            let predictor = load_predictor(predictor.as_ref())?;
            let config = OptimizerConfig::default();
            let service = Service::bind(
                listen.as_str(),
                Policy::from_kind(kind, &config, &predictor),
                ServiceConfig {
                    round_interval: (round_interval_s > 0.0).then(|| Duration::from_secs_f64(round_interval_s)),
                },
            )?;
            let addr = service.local_addr()?;
            // announce the bound address so callers can use port 0
            println!("{}", json!({ "type": "listening", "addr": addr.to_string() }));
            let _ = std::io::stdout().flush();
            service.run()?;
        }
        Command::Report {
            trace,
            predictor,
            fps_upper,
            window_s,
        } => {
            let predictor = load_predictor(predictor.as_ref())?;
            let trace = load_trace(&trace)?;
            print_json(&serving_state_report(&trace, &predictor, fps_upper, window_s)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.render().to_string();
            eprintln!(
                "{}",
                json!({ "error": "usage", "message": message, "detail": detail.trim() })
            );
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
