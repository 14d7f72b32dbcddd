use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use spacegate_core::embedding::ProviderKind;
use spacegate_core::index::{load_exemplar_texts, VectorIndex};
use spacegate_core::pipeline::{load_index, Pipeline, PipelineConfig, PipelineError};
use spacegate_core::registry::Registry;
use spacegate_core::CentroidModel;
use spacegate_sim::Simulator;
use url::Url;

use crate::service;

/// Exit code for configuration and input errors.
pub const EXIT_CONFIG: u8 = 1;
/// Exit code for runtime failures (provider, backend, misconfiguration).
pub const EXIT_RUNTIME: u8 = 2;
/// Exit code of `route` when the message is judged unrelated.
pub const EXIT_REJECTED: u8 = 3;

const DEFAULT_CONFIG_FILE: &str = "spacegate.json";

#[derive(Debug, Parser)]
#[command(
    name = "spacegate",
    version,
    about = "Natural-language control of building spaces"
)]
pub struct Cli {
    /// JSON config file. Defaults to ./spacegate.json when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the gate threshold.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Override the embedding provider.
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderArg>,
    /// Decide but do not call any building API.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    Local,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the chat HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run one message through the pipeline and print the response JSON.
    Route { text: String },
    /// Exemplar index maintenance.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Check the configured fixtures for consistency.
    Validate,
    /// Run the building simulator.
    Simulate {
        #[arg(long, default_value = "127.0.0.1:8090")]
        listen: SocketAddr,
        /// Fixture to start from.
        #[arg(long, default_value = spacegate_sim::DEFAULT_FIXTURE)]
        fixture: String,
        /// Extra fixture files, registered under their file stem.
        #[arg(long = "fixture-file")]
        fixture_files: Vec<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    /// Embed exemplar utterances into an index snapshot.
    Build {
        #[arg(long, default_value = "fixtures/exemplars.json")]
        input: PathBuf,
        /// Defaults to the config's exemplars_path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Cli {
    pub fn pipeline_config(&self) -> Result<PipelineConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
            None if std::path::Path::new(DEFAULT_CONFIG_FILE).exists() => {
                PipelineConfig::load(DEFAULT_CONFIG_FILE).map_err(|e| e.to_string())?
            }
            None => PipelineConfig::default(),
        };
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        match self.provider {
            Some(ProviderArg::Local) => {
                cfg.provider.kind = ProviderKind::LocalHash;
                cfg.provider
                    .dim
                    .get_or_insert(spacegate_core::embedding::DEFAULT_LOCAL_DIM);
            }
            Some(ProviderArg::Remote) if cfg.provider.kind != ProviderKind::Remote => {
                cfg.provider.kind = ProviderKind::Remote;
                cfg.provider.dim = None;
            }
            _ => {}
        }
        if self.dry_run {
            cfg.dry_run = true;
        }
        Ok(cfg)
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

pub async fn run(cli: Cli) -> ExitCode {
    let cfg = match cli.pipeline_config() {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match cli.command {
        Command::Serve { listen } => serve(cfg, listen).await,
        Command::Route { text } => route(cfg, &text).await,
        Command::Index {
            action: IndexAction::Build { input, output },
        } => index_build(cfg, input, output).await,
        Command::Validate => validate(cfg).await,
        Command::Simulate {
            listen,
            fixture,
            fixture_files,
        } => simulate(listen, &fixture, &fixture_files).await,
    }
}

async fn serve(mut cfg: PipelineConfig, listen: Option<String>) -> ExitCode {
    if let Some(l) = listen {
        cfg.listen_address = l;
    }
    let pipeline = match Pipeline::from_config(&cfg).await {
        Ok(p) => Arc::new(p),
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let backend = backend_origin(&cfg, pipeline.registry());
    let listener = match tokio::net::TcpListener::bind(&cfg.listen_address).await {
        Ok(l) => l,
        Err(e) => return fail(EXIT_RUNTIME, format!("cannot bind {}: {e}", cfg.listen_address)),
    };
    let app = service::router(service::AppState::new(pipeline, backend), &cfg.cors_origins);
    match service::serve(listener, app, service::shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}

/// Origin of the building backend: the configured base URL, else the origin
/// of the first registry endpoint.
pub fn backend_origin(cfg: &PipelineConfig, registry: &Registry) -> Option<Url> {
    if let Some(b) = &cfg.backend_base_url {
        return Url::parse(b).ok();
    }
    let first = registry.iter().next()?.transaction.first()?;
    let mut u = Url::parse(&first.endpoint).ok()?;
    u.set_path("/");
    u.set_query(None);
    Some(u)
}

async fn route(cfg: PipelineConfig, text: &str) -> ExitCode {
    if text.trim().is_empty() {
        return fail(EXIT_CONFIG, "message is empty");
    }
    let pipeline = match Pipeline::from_config(&cfg).await {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match pipeline.handle_message(text).await {
        Ok(resp) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&resp).expect("response serializes")
            );
            if resp.decision.is_accepted() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_REJECTED)
            }
        }
        Err(f) => {
            let code = match f.error {
                PipelineError::EmptyText => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
            fail(code, f.error)
        }
    }
}

async fn index_build(cfg: PipelineConfig, input: PathBuf, output: Option<PathBuf>) -> ExitCode {
    let output = output.unwrap_or_else(|| cfg.exemplars_path.clone());
    let exemplars = match load_exemplar_texts(&input) {
        Ok(e) => e,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let provider = match cfg.provider.build() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let index = match VectorIndex::build(&exemplars, provider.as_ref()).await {
        Ok(i) => i,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    match index.save(&output) {
        Ok(snap) => {
            eprintln!(
                "wrote {} records (dim {}) to {}",
                snap.records.len(),
                snap.dim,
                output.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}

async fn validate(cfg: PipelineConfig) -> ExitCode {
    let mut problems = Vec::new();
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, e);
    }
    let registry = match Registry::load(&cfg.registry_path) {
        Ok(r) => {
            println!("registry: {} APIs OK ({})", r.len(), cfg.registry_path.display());
            Some(r)
        }
        Err(e) => {
            problems.push(format!("registry: {e}"));
            None
        }
    };
    let provider = match cfg.provider.build() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    match load_index(&cfg.exemplars_path, provider.as_ref()).await {
        Ok(index) => {
            println!(
                "exemplars: {} records, {} classes ({})",
                index.len(),
                index.api_ids().len(),
                cfg.exemplars_path.display()
            );
            if let (Some(p), Some(i)) = (provider.dim(), index.dim()) {
                if p != i {
                    problems.push(format!("exemplar dim {i} does not match provider dim {p}"));
                }
            }
            if let Err(e) = CentroidModel::train(index.list()) {
                problems.push(format!("classifier: {e}"));
            }
            if let Some(r) = &registry {
                for api_id in index.api_ids() {
                    if !r.contains(api_id) {
                        problems.push(format!("exemplar class {api_id:?} has no registry entry"));
                    }
                }
            }
        }
        Err(e) => problems.push(format!("exemplars: {e}")),
    }
    if problems.is_empty() {
        println!("ok");
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("error: {p}");
        }
        ExitCode::from(EXIT_CONFIG)
    }
}

async fn simulate(listen: SocketAddr, fixture: &str, files: &[PathBuf]) -> ExitCode {
    let sim = Simulator::new();
    for f in files {
        if let Err(e) = sim.add_fixture_file(f) {
            return fail(EXIT_CONFIG, e);
        }
    }
    if let Err(e) = sim.reset(fixture) {
        return fail(EXIT_CONFIG, e);
    }
    let listener = match tokio::net::TcpListener::bind(listen).await {
        Ok(l) => l,
        Err(e) => return fail(EXIT_RUNTIME, format!("cannot bind {listen}: {e}")),
    };
    tracing::info!(%listen, fixture, "building simulator listening");
    match service::serve(listener, spacegate_sim::router(sim), service::shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_RUNTIME, e),
    }
}
