use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use readpack_core::cluster::SimilarityTarget;
use readpack_core::corpus::corpus_stats;
use readpack_core::loraplan::{self, ModelGeometry};
use readpack_core::pipeline::config::{ClusterConfig, PackConfig};
use readpack_core::pipeline::{self, stages, PipelineError, RunOptions, StageReport};
use readpack_core::qagen::{
    ChatClientConfig, PromptTemplate, DEFAULT_DISTILL_SAMPLES, DEFAULT_MODEL, MOCK_ENDPOINT,
};
use readpack_core::store::Store;
use readpack_core::tokenize;

#[derive(Parser)]
#[command(name = "readpack", version, about = "Build packed reading-comprehension training data from a domain corpus")]
struct Cli {
    /// Rerun stages even when their outputs are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a JSONL corpus (and optional instruction files) into a store.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        instructions: Vec<PathBuf>,
    },
    /// Print corpus statistics as JSON.
    Stats { store: PathBuf },
    /// Generate QA pairs with a chat model.
    Genqa {
        #[arg(long)]
        store: PathBuf,
        /// Chat-completions URL, or mock:// for the offline mock.
        #[arg(long, default_value = MOCK_ENDPOINT)]
        endpoint: String,
        #[arg(long, default_value = DEFAULT_MODEL)]
        model: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 3)]
        retry_limit: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// File holding a prompt template with {DOCUMENT} and {DOMAIN}.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Extract QA pairs with regex rules.
    RegexQa {
        #[arg(long)]
        store: PathBuf,
        /// TOML rule file; the built-in rule alone when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Sample generation records into a prompt/completion file.
    DistillExport {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DISTILL_SAMPLES)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Group documents into length-bounded similarity clusters.
    Cluster {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        lmax: Option<usize>,
        #[arg(long)]
        dmax: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `hash` or an embeddings URL.
        #[arg(long, default_value = "hash")]
        embedder: String,
        #[arg(long)]
        embedding_model: Option<String>,
        /// Compare candidates with the seed document instead of the centroid.
        #[arg(long)]
        seed_similarity: bool,
    },
    /// Pack clusters and instructions into fixed-capacity sequences.
    Pack {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        capacity: usize,
        #[arg(long)]
        general_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split_oversize: bool,
    },
    /// Size a LoRA adapter.
    PlanLora {
        /// Preset name or geometry JSON file.
        #[arg(long, default_value = "llama-7b")]
        model: String,
        #[arg(long, default_value_t = loraplan::DEFAULT_RANK)]
        rank: usize,
        #[arg(long, default_value = "all-linear")]
        targets: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the comparison with reference budgets.
        #[arg(long)]
        compare: bool,
    },
    /// Run every stage from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Errors in user input; everything else is a stage failure.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn report(r: &StageReport) -> anyhow::Result<()> {
    print_json(r)
}

fn open_store(path: &Path) -> anyhow::Result<Store> {
    Store::open(path).map_err(|e| usage(e.to_string()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let force = cli.force;
    let tok = tokenize::whitespace();
    match cli.command {
        Command::Ingest {
            corpus,
            domain,
            out,
            instructions,
        } => {
            if domain.trim().is_empty() {
                return Err(usage("--domain must be non-empty"));
            }
            let store = Store::create(&out).with_context(|| format!("creating {}", out.display()))?;
            report(&stages::ingest(&store, &corpus, &domain, &instructions, force)?)
        }
        Command::Stats { store } => {
            let store = open_store(&store)?;
            let docs = store.documents()?;
            let pairs = store.pairs(&docs)?;
            print_json(&corpus_stats(&docs, &pairs, tok.as_ref()))
        }
        Command::Genqa {
            store,
            endpoint,
            model,
            concurrency,
            retry_limit,
            seed,
            template,
        } => {
            if concurrency == 0 {
                return Err(usage("--concurrency must be at least 1"));
            }
            let template = match template {
                Some(p) => {
                    let body = std::fs::read_to_string(&p)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    PromptTemplate::new(body).map_err(|e| usage(e.to_string()))?
                }
                None => PromptTemplate::default(),
            };
            let store = open_store(&store)?;
            let mut client = ChatClientConfig::new(endpoint.clone());
            client.model_name = model;
            client.max_concurrency = concurrency;
            client.retry_limit = retry_limit;
            let service = stages::chat_service(&endpoint, seed);
            report(&stages::genqa(&store, &template, &client, service.as_ref(), force)?)
        }
        Command::RegexQa { store, rules } => {
            let store = open_store(&store)?;
            report(&stages::regex_qa(&store, rules.as_deref(), force)?)
        }
        Command::DistillExport { store, n, seed, out } => {
            let store = open_store(&store)?;
            let written = stages::distill(&store, n, seed, &out)?;
            print_json(&serde_json::json!({"examples": written, "out": out}))
        }
        Command::Cluster {
            store,
            lmax,
            dmax,
            tau,
            seed,
            embedder,
            embedding_model,
            seed_similarity,
        } => {
            let mut cfg = ClusterConfig::default();
            cfg.lmax = lmax.unwrap_or(cfg.lmax);
            cfg.dmax = dmax.unwrap_or(cfg.dmax);
            cfg.tau = tau.unwrap_or(cfg.tau);
            cfg.seed = seed;
            cfg.embedder = embedder;
            cfg.embedding_model = embedding_model;
            if seed_similarity {
                cfg.target = SimilarityTarget::Seed;
            }
            cfg.params().validate().map_err(|e| usage(e.to_string()))?;
            let store = open_store(&store)?;
            let embed = stages::embedder(&cfg, 3);
            report(&stages::cluster(&store, &cfg, embed.as_ref(), tok.as_ref(), force)?)
        }
        Command::Pack {
            store,
            capacity,
            general_fraction,
            seed,
            out,
            split_oversize,
        } => {
            let cfg = PackConfig {
                capacity,
                general_fraction: general_fraction
                    .unwrap_or(readpack_core::pack::DEFAULT_GENERAL_TOKEN_FRACTION),
                seed,
                split_oversize,
            };
            if cfg.capacity == 0 {
                return Err(usage("--capacity must be at least 1"));
            }
            if !(0.0..1.0).contains(&cfg.general_fraction) {
                return Err(usage("--general-fraction must be in [0, 1)"));
            }
            let store = open_store(&store)?;
            report(&stages::pack(&store, &cfg, tok.as_ref(), &out, force)?)
        }
        Command::PlanLora {
            model,
            rank,
            targets,
            out,
            compare,
        } => {
            let geom = ModelGeometry::resolve(&model).map_err(|e| usage(e.to_string()))?;
            let targets = geom.parse_targets(&targets).map_err(|e| usage(e.to_string()))?;
            let plan = match &out {
                Some(path) => loraplan::emit_plan(&geom, rank, &targets, path),
                None => loraplan::plan(&geom, rank, &targets),
            }
            .map_err(|e| match e {
                loraplan::PlanError::Io { .. } => anyhow::Error::new(e),
                other => usage(other.to_string()),
            })?;
            print_json(&plan)?;
            if compare {
                print_json(&loraplan::compare_with_reference(&geom)?)?;
            }
            Ok(())
        }
        Command::Run { config } => {
            let opts = RunOptions { force };
            match pipeline::run_from_file(&config, &opts) {
                Ok(manifest) => {
                    for w in &manifest.warnings {
                        log::warn!("{w}");
                    }
                    print_json(&manifest.stages)
                }
                Err(PipelineError::Config(e)) => Err(usage(e.to_string())),
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
