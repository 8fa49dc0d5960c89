use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use relwitness::pipeline::{PipelineConfig, PipelineError, Workspace};
use relwitness::pulearn::gradient_report;
use relwitness_cli::config::{parse_override, resolve, ConfigError};
use relwitness_cli::server::router;
use serde_json::{json, Value};

/// Witness-grounded relation recovery pipeline.
#[derive(Parser)]
#[command(name = "relwitness", version)]
struct Cli {
    /// Data directory holding the run's artifacts.
    #[arg(long, global = true, env = "RELWITNESS_DATA", default_value = "data")]
    data: PathBuf,
    /// TOML config file layered over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `key.path=value`, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set scenes=N`.
    #[arg(long, global = true)]
    scenes: Option<usize>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Accept inputs written under a different config hash.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and their manifest.
    Synth,
    /// Propose relation candidates for every ordered pair.
    Propose,
    /// Build witness records for unannotated candidates.
    Witness,
    /// Triage witness records into the three decisions.
    Triage,
    /// Train the full model and the supervised baseline.
    Train,
    /// Decode scene graphs from both models.
    Decode,
    /// Sample the blind audit pool.
    AuditPool,
    /// Serve the audit API and the UI bundle.
    AuditServe {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory of the built UI bundle.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Compute audit metrics from stored or simulated annotations.
    AuditReport {
        /// Label the pool with simulated annotators.
        #[arg(long)]
        simulate: bool,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Print the resolved config and its hash.
    Config,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Pipeline(PipelineError),
    Io(String),
    Check(String),
}

impl CliError {
    fn record(&self) -> Value {
        let (code, message) = match self {
            Self::Config(e) => ("config", e.to_string()),
            Self::Pipeline(e) => (e.code(), e.to_string()),
            Self::Io(m) => ("io", m.clone()),
            Self::Check(m) => ("check_failed", m.clone()),
        };
        json!({ "error": { "code": code, "message": message } })
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        Self::Pipeline(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let file = cli
        .config
        .as_ref()
        .map(|p| std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))))
        .transpose()?;
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = cli.seed {
        overrides.push(json!({ "seed": s }));
    }
    if let Some(n) = cli.scenes {
        overrides.push(json!({ "scenes": n }));
    }
    Ok(resolve(file.as_deref(), &overrides)?)
}

fn serve(ws: &Workspace, addr: &str, ui: Option<PathBuf>) -> Result<Value, CliError> {
    let service = Arc::new(ws.audit_service()?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        eprintln!("{}", json!({ "listening": local.to_string() }));
        axum::serve(listener, router(service, ui))
            .await
            .map_err(|e| CliError::Io(e.to_string()))?;
        Ok(json!({ "stopped": local.to_string() }))
    })
}

fn run(cli: Cli) -> Result<Value, CliError> {
    let config = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    if let Command::Gradcheck { eps, tolerance } = cli.command {
        let report = gradient_report(config.trainer.seed, eps);
        let worst = report.iter().map(|t| t.max_relative_error).fold(0.0, f64::max);
        if worst >= tolerance || worst.is_nan() {
            return Err(CliError::Check(format!(
                "max relative error {worst:e} exceeds {tolerance:e}"
            )));
        }
        return Ok(json!({ "terms": report, "max_relative_error": worst }));
    }
    if let Command::Config = cli.command {
        return Ok(json!({ "config_hash": config.hash(), "config": config }));
    }
    let ws = Workspace::new(&cli.data, config, cli.force)?;
    let result = match cli.command {
        Command::Synth => json!({ "scenes": ws.synth()?.len() }),
        Command::Propose => json!({ "candidates": ws.propose()? }),
        Command::Witness => json!({ "records": ws.witness()? }),
        Command::Triage => json!(ws.triage()?),
        Command::Train => json!(ws.train()?),
        Command::Decode => json!({ "edges": ws.decode()? }),
        Command::AuditPool => {
            let pool = ws.audit_pool()?;
            json!({ "candidates": pool.candidates.len(), "shortfalls": pool.shortfalls })
        }
        Command::AuditServe { addr, ui } => serve(&ws, &addr, ui)?,
        Command::AuditReport { simulate } => json!(ws.audit_report(simulate)?),
        Command::Gradcheck { .. } | Command::Config => unreachable!("handled above"),
    };
    Ok(json!({ "config_hash": ws.hash(), "result": result }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({ "error": { "code": "usage", "message": e.render().to_string().trim() } });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
