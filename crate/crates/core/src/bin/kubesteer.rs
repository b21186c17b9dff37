use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use kubesteer_core::config::Settings;
use kubesteer_core::engine::OutcomeKind;
use kubesteer_core::kube::fixtures;
use kubesteer_core::scenario;
use kubesteer_core::system::System;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "kubesteer", version, about = "Natural-language operations for Kubernetes clusters")]
struct Cli {
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the HTTP API.
    Serve {
        #[arg(long, env = "KUBESTEER_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
    },
    /// Load a fake-cluster fixture and store it for `--backend fake:seeded`.
    Seed { fixture: String },
    /// Run a scenario headlessly and check its expectations.
    Replay {
        /// Built-in scenario name or scenario file.
        scenario: String,
        #[arg(long, default_value = "replay")]
        session: String,
        /// Print the final workflow state as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { listen } => serve(cli.settings, &listen),
        Command::Seed { fixture } => seed(&cli.settings, &fixture),
        Command::Replay { scenario, session, json } => replay(cli.settings, &scenario, &session, json),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn serve(settings: Settings, listen: &str) -> CliResult {
    let system = Arc::new(System::build(settings)?);
    let health = system.health();
    tracing::info!(status = %health.status, components = ?health.components, "system ready");
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(kubesteer_core::api::serve(system, listen))?;
    Ok(ExitCode::SUCCESS)
}

fn seed(settings: &Settings, fixture: &str) -> CliResult {
    let model = fixtures::seed(fixture, settings.fixture_dir.as_deref())?;
    println!(
        "fixture {fixture}: {} namespaces, {} pods, {} deployments, {} services, {} jobs",
        model.namespaces.len(),
        model.pods.len(),
        model.deployments.len(),
        model.services.len(),
        model.jobs.len()
    );
    match settings.seeded_cluster() {
        Some(path) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&path, model.to_toml())?;
            println!("wrote {}", path.display());
        }
        None => println!("no data directory set; nothing written"),
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(settings: Settings, name: &str, session: &str, json: bool) -> CliResult {
    let scenario = scenario::load(name)?;
    let system = System::for_scenario(&scenario, settings)?;
    let outcome = system.replay(&scenario, session)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome.state)?);
    } else {
        println!("{}", outcome.content);
    }
    let kind = match outcome.kind {
        OutcomeKind::Response => "response",
        OutcomeKind::Interrupt => "interrupt",
        OutcomeKind::Rejection => "rejection",
        OutcomeKind::Failure => "failure",
    };
    let mut failures = Vec::new();
    if let Some(want) = &scenario.expect.kind {
        if want != kind {
            failures.push(format!("expected outcome {want}, got {kind}"));
        }
    }
    for needle in &scenario.expect.contains {
        if !outcome.content.contains(needle.as_str()) {
            failures.push(format!("response lacks {needle:?}"));
        }
    }
    if failures.is_empty() {
        eprintln!("replay {}: ok ({kind}, {} steps)", scenario.name, outcome.state.step_counter);
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("replay {}: {f}", scenario.name);
        }
        Ok(ExitCode::FAILURE)
    }
}
