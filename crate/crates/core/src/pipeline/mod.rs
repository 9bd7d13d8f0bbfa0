//! End-to-end runs from a single config file.

pub mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ConfigError, PipelineConfig, QaMethod};
pub use stages::{StageError, StageReport, StageStatus};

use crate::cluster::Embedder;
use crate::qagen::ChatService;
use crate::store::{self, Store};
use crate::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub qa: Option<u64>,
    pub cluster: u64,
    pub pack: u64,
}

/// Everything needed to reproduce and audit a run. Contains no timestamps or
/// absolute paths, so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    pub tokenizer: String,
    pub seeds: Seeds,
    pub stages: Vec<StageReport>,
    pub warnings: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: StageError,
        manifest: Box<RunManifest>,
    },
}

/// External services a run talks to.
pub struct Services {
    pub chat: Box<dyn ChatService>,
    pub embedder: Box<dyn Embedder>,
}

impl Services {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            chat: stages::chat_service(&cfg.qa.endpoint, cfg.qa.seed),
            embedder: stages::embedder(&cfg.cluster, cfg.qa.retry_limit),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Rerun every stage even when its outputs are current.
    pub force: bool,
}

/// Loads `config_path` and runs every stage with services built from it.
pub fn run_from_file(config_path: &Path, opts: &RunOptions) -> Result<RunManifest, PipelineError> {
    let cfg = PipelineConfig::from_file(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let services = Services::from_config(&cfg);
    run_pipeline(&cfg, base, &services, opts)
}

/// Runs ingest, QA, cluster and pack in order. Relative paths in `cfg` are
/// resolved against `base`. The manifest is written to the store whether or
/// not a stage fails.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    base: &Path,
    services: &Services,
    opts: &RunOptions,
) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let tok = tokenize::whitespace();
    let store_root = cfg.resolve(base, &cfg.output.store);
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        tokenizer: tok.name().to_string(),
        seeds: Seeds {
            qa: cfg.qa.seed,
            cluster: cfg.cluster.seed,
            pack: cfg.pack.seed,
        },
        stages: Vec::new(),
        warnings: Vec::new(),
        failed_stage: None,
        error: None,
    };
    let store = match Store::create(&store_root) {
        Ok(s) => s,
        Err(e) => {
            let source = StageError::Io {
                path: store_root.display().to_string(),
                source: e,
            };
            return Err(fail(manifest, None, "ingest", source));
        }
    };
    let mut timing: BTreeMap<String, f64> = BTreeMap::new();
    let store = &store;
    let force = opts.force;

    let corpus = cfg.resolve(base, &cfg.ingest.corpus);
    let instructions: Vec<_> = cfg.ingest.instructions.iter().map(|p| cfg.resolve(base, p)).collect();
    let training_file = cfg.resolve(base, &cfg.output.training_file);

    type Step<'a> = (&'static str, Box<dyn FnOnce() -> Result<StageReport, StageError> + 'a>);
    let qa_step: Step = match cfg.qa.method {
        QaMethod::Llm => (
            "genqa",
            Box::new(|| {
                let template = cfg.qa.template().map_err(|e| StageError::Invalid(e.to_string()))?;
                stages::genqa(store, &template, &cfg.qa.client(), services.chat.as_ref(), force)
            }),
        ),
        QaMethod::Regex => {
            let rules = cfg.qa.rules.as_ref().map(|p| cfg.resolve(base, p));
            (
                "regex_qa",
                Box::new(move || stages::regex_qa(store, rules.as_deref(), force)),
            )
        }
    };
    let steps: Vec<Step> = vec![
        (
            "ingest",
            Box::new(|| stages::ingest(store, &corpus, &cfg.ingest.domain, &instructions, force)),
        ),
        qa_step,
        (
            "cluster",
            Box::new(|| stages::cluster(store, &cfg.cluster, services.embedder.as_ref(), tok.as_ref(), force)),
        ),
        (
            "pack",
            Box::new(|| stages::pack(store, &cfg.pack, tok.as_ref(), &training_file, force)),
        ),
    ];

    for (name, step) in steps {
        let started = Instant::now();
        let outcome = step();
        timing.insert(name.to_string(), started.elapsed().as_secs_f64());
        match outcome {
            Ok(report) => {
                manifest
                    .warnings
                    .extend(report.warnings.iter().map(|w| format!("{name}: {w}")));
                manifest.stages.push(report);
            }
            Err(source) => return Err(fail(manifest, Some((store, &timing)), name, source)),
        }
    }
    write_outputs(store, &manifest, &timing);
    Ok(manifest)
}

fn write_outputs(store: &Store, manifest: &RunManifest, timing: &BTreeMap<String, f64>) {
    for (name, value) in [
        (store::RUN_MANIFEST, serde_json::to_value(manifest)),
        (store::RUN_TIMING, serde_json::to_value(timing)),
    ] {
        let path = store.path(name);
        if let Err(e) = value
            .map_err(std::io::Error::other)
            .and_then(|v| store::write_json(&path, &v))
        {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

fn fail(
    mut manifest: RunManifest,
    store: Option<(&Store, &BTreeMap<String, f64>)>,
    stage: &str,
    source: StageError,
) -> PipelineError {
    manifest.failed_stage = Some(stage.to_string());
    manifest.error = Some(source.to_string());
    if let Some((store, timing)) = store {
        write_outputs(store, &manifest, timing);
    }
    PipelineError::Stage {
        stage: stage.to_string(),
        source,
        manifest: Box::new(manifest),
    }
}
