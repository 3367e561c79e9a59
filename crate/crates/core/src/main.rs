//! Command-line entry point.

use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};

use react_planner::explainer::{embed, Dataset, Explainer};
use react_planner::harness::{self, ExitStatus};
use react_planner::planner::TaskPlanner;
use react_planner::policy::{EndpointPolicy, EndpointPolicyConfig, Policy, ScriptedPolicy};
use react_planner::scenario::{load_world, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyKind {
    Scripted,
    Endpoint,
}

#[derive(Debug, Parser)]
#[command(
    name = "react-planner",
    version,
    about = "Reason-and-act task planner for a simulated household robot"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[arg(long, value_enum, default_value = "scripted", global = true)]
    policy: PolicyKind,
    /// Overrides the scenario's step budget.
    #[arg(long, global = true)]
    budget: Option<u32>,
    /// Overrides the scenario's seed; it is recorded in the log and report.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Transcript log destination (stdout when omitted).
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// JSON-lines failure dataset replacing the built-in one.
    #[arg(long, global = true)]
    explainer_data: Option<PathBuf>,
    /// Endpoint policy settings (JSON).
    #[arg(long, global = true)]
    endpoint_config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run { file: PathBuf },
    /// Run every scenario in a directory and print the summary table.
    Suite { dir: PathBuf },
    /// Interactive session over a world or scenario file.
    Repl { world: PathBuf },
    /// Print the request embedding as hex-encoded f64 bits.
    #[command(hide = true)]
    Embed { text: String },
}

fn load_endpoint(path: Option<&Path>) -> Result<EndpointPolicyConfig> {
    let path = path.context("--policy endpoint requires --endpoint-config")?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: EndpointPolicyConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn planner(cli: &Cli) -> Result<TaskPlanner> {
    let mut planner = TaskPlanner::default();
    if let Some(path) = &cli.explainer_data {
        planner.explainer = Explainer::new(Dataset::load(path)?);
    }
    Ok(planner)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli, file: &Path) -> Result<ExitStatus> {
    let scenario = match Scenario::load(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return Ok(ExitStatus::InputError);
        }
    };
    let mut planner = planner(cli)?;
    planner.budget = cli.budget.unwrap_or(scenario.budget);
    let seed = cli.seed.unwrap_or(scenario.seed);
    let mut policy: Box<dyn Policy> = match cli.policy {
        PolicyKind::Scripted => match &scenario.policy_script {
            Some(script) => Box::new(ScriptedPolicy::new(script.clone())),
            None => {
                eprintln!(
                    "SCENARIO_PARSE_ERROR: {}: no policy_script for the scripted policy",
                    file.display()
                );
                return Ok(ExitStatus::InputError);
            }
        },
        PolicyKind::Endpoint => Box::new(EndpointPolicy::new(load_endpoint(
            cli.endpoint_config.as_deref(),
        )?)?),
    };
    let result = harness::run_with_policy(&scenario, &planner, policy.as_mut(), seed);
    write_or_print(cli.log.as_deref(), &result.log)?;
    if let Some(path) = &cli.report {
        std::fs::write(path, serde_json::to_string_pretty(&result.report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(g) = &result.report.golden {
        if g.matched {
            eprintln!("golden: {} actions matched", g.actual_len);
        } else {
            eprintln!(
                "GOLDEN_MISMATCH: first divergence at action {}",
                g.divergence_index.unwrap_or_default()
            );
        }
    }
    Ok(result.exit)
}

fn suite(cli: &Cli, dir: &Path) -> Result<ExitStatus> {
    let summary = harness::run_suite(dir, &planner(cli)?)
        .with_context(|| format!("reading {}", dir.display()))?;
    for e in summary.entries.iter().filter(|e| !e.success) {
        eprintln!(
            "{}: {}",
            e.path.display(),
            e.error.as_deref().unwrap_or("failed")
        );
    }
    print!("{}", summary.table());
    if let Some(path) = &cli.report {
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(ExitStatus::Success)
}

fn repl(cli: &Cli, world_path: &Path) -> Result<ExitStatus> {
    let (world, scenario) = match load_world(world_path) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}");
            return Ok(ExitStatus::InputError);
        }
    };
    let mut planner = planner(cli)?;
    if let Some(b) = cli.budget {
        planner.budget = b;
    }
    let mut make: Box<dyn FnMut() -> Result<Box<dyn Policy>, String>> = match cli.policy {
        PolicyKind::Endpoint => {
            let config = load_endpoint(cli.endpoint_config.as_deref())?;
            Box::new(move || {
                EndpointPolicy::new(config.clone())
                    .map(|p| Box::new(p) as Box<dyn Policy>)
                    .map_err(|e| e.to_string())
            })
        }
        PolicyKind::Scripted => {
            let script = scenario
                .and_then(|s| s.policy_script)
                .context("the scripted policy needs a scenario file with a policy_script")?;
            Box::new(move || Ok(Box::new(ScriptedPolicy::new(script.clone())) as Box<dyn Policy>))
        }
    };
    let stdin = io::stdin();
    let mut input = stdin.lock();
    harness::repl(
        world,
        &planner,
        make.as_mut(),
        &mut input as &mut dyn BufRead,
        &mut io::stdout(),
    )?;
    Ok(ExitStatus::Success)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let status = match &cli.command {
        Cmd::Run { file } => run(&cli, file),
        Cmd::Suite { dir } => suite(&cli, dir),
        Cmd::Repl { world } => repl(&cli, world),
        Cmd::Embed { text } => {
            let hex: Vec<String> = embed(text)
                .components()
                .iter()
                .map(|c| format!("{:016x}", c.to_bits()))
                .collect();
            println!("{}", hex.join(" "));
            Ok(ExitStatus::Success)
        }
    };
    match status {
        Ok(s) => ExitCode::from(s.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ExitStatus::InputError.code() as u8)
        }
    }
}
