use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use soas::broker::Broker;
use soas::clock::{Clock, SystemClock};
use soas::config::SoasConfig;
use soas::personal::PipelineError;
use soas::render::Format;
use soas::sim::{self, AgentSpec, Behavior, ServeOptions, DEFAULT_CAPABILITY};

#[derive(Parser)]
#[command(name = "soas", version, about = "Semantic agent-based search broker")]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = "SOAS_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one full-text query through the pipeline.
    Query {
        text: String,
        #[arg(long, default_value = "json")]
        format: String,
        /// Write the rendered output here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the agent registry.
    Registry {
        #[command(subcommand)]
        command: RegistryCommand,
    },
    /// Simulated domain agents.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// List the agents known after start-up.
    List,
}

#[derive(Subcommand)]
enum AgentCommand {
    /// Serve a knowledge base over the wire protocol.
    Run {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Agent id; defaults to `<domain>-<port>`.
        #[arg(long)]
        id: Option<String>,
        #[arg(long = "capability")]
        capabilities: Vec<String>,
        /// Registry endpoint to self-register with.
        #[arg(long)]
        registry: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        heartbeat_ms: u64,
        /// Delay every answer (fault injection).
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<SoasConfig, String> {
    match path {
        Some(p) => SoasConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(SoasConfig::default()),
    }
}

async fn run_query(config: &SoasConfig, text: &str, format: &str, out: Option<&PathBuf>) -> Result<(), (i32, String)> {
    let format: Format = format
        .parse()
        .map_err(|e: soas::render::RenderError| (1, e.to_string()))?;
    let broker = Broker::start(config).await.map_err(|e| (1, e.to_string()))?;
    match broker.personal_agent().handle_request(text, format).await {
        Ok((rendered, report)) => {
            tracing::info!(request_id = %report.request_id, elapsed_ms = report.elapsed_ms, "request complete");
            match out {
                Some(path) => std::fs::write(path, rendered.content)
                    .map_err(|e| (1, format!("cannot write {}: {e}", path.display())))?,
                None => print!("{}", rendered.content),
            }
            Ok(())
        }
        Err(e) => {
            let mut message = e.to_string();
            if let PipelineError::NoAgentsResponded { outcomes, .. } = &e {
                for (agent, outcome) in outcomes {
                    message.push_str(&format!("\n  {agent}: {outcome}"));
                }
            }
            Err((e.exit_code(), message))
        }
    }
}

async fn list_registry(config: &SoasConfig) -> Result<(), (i32, String)> {
    let broker = Broker::start(config).await.map_err(|e| (1, e.to_string()))?;
    let now = SystemClock.now_ms();
    let registry = broker.registry();
    println!("agent_id | domain | capabilities | endpoint | live");
    for d in registry.snapshot() {
        let caps: Vec<&str> = d.capabilities.iter().map(String::as_str).collect();
        println!(
            "{} | {} | {} | {} | {}",
            d.agent_id,
            d.domain,
            caps.join(","),
            d.endpoint,
            d.is_live(now, registry.ttl_ms())
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn run_agent(
    kb: PathBuf,
    domain: String,
    host: String,
    port: u16,
    id: Option<String>,
    capabilities: Vec<String>,
    registry: Option<String>,
    heartbeat_ms: u64,
    delay_ms: u64,
) -> Result<(), (i32, String)> {
    let kb = sim::load_knowledge_base(&kb).map_err(|e| (1, format!("{}: {e}", kb.display())))?;
    let capabilities: BTreeSet<String> = if capabilities.is_empty() {
        [DEFAULT_CAPABILITY.to_string()].into()
    } else {
        capabilities.into_iter().collect()
    };
    let spec = AgentSpec {
        agent_id: id.unwrap_or_else(|| format!("{domain}-{port}")),
        domain,
        capabilities,
    };
    let options = ServeOptions {
        behavior: if delay_ms > 0 {
            Behavior::Delay(Duration::from_millis(delay_ms))
        } else {
            Behavior::Normal
        },
        gauge: None,
        heartbeat_ms: Some(heartbeat_ms),
        registration_timeout_ms: 2_000,
    };
    let triples = kb.len();
    let agent = sim::serve(
        Arc::new(kb),
        &format!("{host}:{port}"),
        registry.as_deref(),
        spec,
        options,
    )
    .await
    .map_err(|e| (1, e.to_string()))?;
    eprintln!(
        "agent {} serving {triples} triples on {}",
        agent.descriptor().agent_id,
        agent.local_addr()
    );
    tokio::signal::ctrl_c().await.map_err(|e| (1, e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };

    let result = runtime.block_on(async {
        let config = load_config(cli.config.as_ref()).map_err(|e| (1, e))?;
        match cli.command {
            Command::Query { text, format, out } => run_query(&config, &text, &format, out.as_ref()).await,
            Command::Registry {
                command: RegistryCommand::List,
            } => list_registry(&config).await,
            Command::Agent {
                command:
                    AgentCommand::Run {
                        kb,
                        domain,
                        port,
                        host,
                        id,
                        capabilities,
                        registry,
                        heartbeat_ms,
                        delay_ms,
                    },
            } => {
                run_agent(
                    kb,
                    domain,
                    host,
                    port,
                    id,
                    capabilities,
                    registry,
                    heartbeat_ms,
                    delay_ms,
                )
                .await
            }
        }
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
