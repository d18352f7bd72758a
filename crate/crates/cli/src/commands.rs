use crate::config::{ConfigError, RunConfigFile};
use hyposearch::client::{BackendRegistry, ChatClient, ClientError, VisionClient};
use hyposearch::discovery::{
    final_embedding, final_report, load_checkpoint, read_embedding_csv, read_snapshot_csv, run, write_embedding_csv,
    write_snapshot_csv, LoopContext, LoopError, RunState,
};
use hyposearch::domain::{default_options, Hypothesis, HypothesisSet, Origin};
use hyposearch::hypogen::{render_prompt, GenerationRequest};
use hyposearch::ingest::{load_manifest, DatasetSnapshot};
use hyposearch::stats::ModelRegistry;
use hyposearch::synth::{register_synthetic_backends, SyntheticWorld, WorldSpec};
use hyposearch::vqa::{embed_dataset, AnswerCache, ImageResolver, BATCH_TEMPLATE};
use serde::Deserialize;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const SNAPSHOT_FILE: &str = "snapshot.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const REPORT_DIR: &str = "report";

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Endpoint(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Endpoint(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LoopError> for CliError {
    fn from(e: LoopError) -> Self {
        match e {
            LoopError::Config(_) => CliError::Config(e.to_string()),
            LoopError::Aborted { .. } => CliError::Endpoint(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn client_error(e: ClientError) -> CliError {
    match e {
        ClientError::MissingAuth(_) | ClientError::UnknownBackend(_) | ClientError::Config(_) | ClientError::Offline => {
            CliError::Config(format!("preflight: {e}"))
        }
        _ => CliError::Endpoint(e.to_string()),
    }
}

fn io_data(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Dataset, backends and cache resolved from a validated config.
pub struct Prepared {
    pub snapshot: DatasetSnapshot,
    pub chat: Arc<dyn ChatClient>,
    pub vision: Arc<dyn VisionClient>,
    pub cache: AnswerCache,
    pub resolver: ImageResolver,
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfigFile, CliError> {
    let mut cfg = RunConfigFile::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    cfg.validate(&BackendRegistry::with_defaults())?;
    Ok(cfg)
}

/// Builds everything a command needs. Fails before any endpoint call when
/// credentials are missing or `offline` meets a remote backend.
pub fn prepare(cfg: &RunConfigFile, offline: bool) -> Result<Prepared, CliError> {
    let mut registry = BackendRegistry::with_defaults();
    let (snapshot, image_base) = match (&cfg.dataset.manifest, &cfg.dataset.synthetic) {
        (Some(manifest), None) => {
            let path = cfg.resolve(manifest);
            let snap = load_manifest(&path, cfg.dataset.split, cfg.dataset.seed)
                .map_err(|e| CliError::Data(e.to_string()))?;
            (snap, path.parent().map(Path::to_path_buf))
        }
        (None, Some(spec_path)) => {
            let path = cfg.resolve(spec_path);
            let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut spec = WorldSpec::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            spec.seed = cfg.dataset.seed;
            spec.split = cfg.dataset.split;
            let world = Arc::new(SyntheticWorld::generate(spec).map_err(|e| CliError::Config(e.to_string()))?);
            register_synthetic_backends(
                &mut registry,
                world.clone(),
                cfg.loop_config.seed,
                cfg.chat_behavior(),
                cfg.mllm.failure_rate,
            );
            (world.snapshot.clone(), None)
        }
        _ => unreachable!("validated: exactly one dataset source"),
    };
    let chat = registry
        .chat(&cfg.llm.backend, &cfg.llm_backend())
        .map_err(client_error)?;
    let vision = registry
        .vision(&cfg.mllm.backend, &cfg.mllm_backend())
        .map_err(client_error)?;
    if offline && (chat.is_remote() || vision.is_remote()) {
        return Err(CliError::Config(
            "--offline forbids network access but a remote backend is configured".into(),
        ));
    }
    let cache = match cfg.cache_dir() {
        Some(dir) => AnswerCache::on_disk(&dir).map_err(io_data(&dir))?,
        None => AnswerCache::in_memory(),
    };
    let image_dir = cfg.dataset.image_dir.as_deref().map(|p| cfg.resolve(p)).or(image_base);
    Ok(Prepared {
        snapshot,
        chat,
        vision,
        cache,
        resolver: ImageResolver::new(image_dir),
    })
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock(PathBuf);

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(run_dir).map_err(io_data(run_dir))?;
        let path = run_dir.join("run.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Config(format!(
                "run directory {} is in use by another process (remove {} if it is stale)",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_data(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Prompts iteration 0 would send, without calling anything.
pub fn dry_run(cfg: &RunConfigFile) -> Result<String, CliError> {
    let lc = &cfg.loop_config;
    let req = GenerationRequest::bootstrap(lc.k, lc.alpha, &lc.domain_context);
    let seed_prompt = render_prompt(&req).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!(
        "=== hypothesis generation (seed) ===\n{seed_prompt}\n\n=== per-image batch template (filled with the generated set) ===\n{BATCH_TEMPLATE}"
    ))
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub state: RunState,
    pub report_files: Vec<PathBuf>,
}

pub fn cmd_run(cfg: &RunConfigFile, offline: bool) -> Result<RunSummary, CliError> {
    let prepared = prepare(cfg, offline)?;
    let run_dir = cfg.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    let models = ModelRegistry::with_defaults();
    let generation = cfg.generation_settings();
    let embedding = cfg.embed_settings();
    let ctx = LoopContext {
        snapshot: &prepared.snapshot,
        chat: prepared.chat.as_ref(),
        vision: prepared.vision.as_ref(),
        cache: &prepared.cache,
        resolver: &prepared.resolver,
        models: &models,
        generation: &generation,
        embedding: &embedding,
        run_dir: Some(&run_dir),
    };
    let state = run(&cfg.loop_config, &ctx)?;
    let emb = final_embedding(&state, &ctx).map_err(CliError::from)?;
    let set = &state.incumbent().expect("finished runs have an incumbent").set;
    let ids: Vec<String> = prepared.snapshot.records.iter().map(|r| r.segment_id.clone()).collect();
    write_snapshot_csv(&run_dir.join(SNAPSHOT_FILE), &prepared.snapshot)?;
    write_embedding_csv(&run_dir.join(EMBEDDING_FILE), set, &emb, &ids)?;
    let bundle = final_report(&state, &prepared.snapshot, &emb, &models, cfg.output.cv_folds)?;
    let report_files = bundle.write(&run_dir.join(REPORT_DIR))?;
    Ok(RunSummary {
        run_dir,
        state,
        report_files,
    })
}

/// Rebuilds the report bundle from the run directory alone.
pub fn cmd_report(run_dir: &Path, cv_folds: Option<usize>) -> Result<Vec<PathBuf>, CliError> {
    let state = load_checkpoint(run_dir)?;
    let set = &state
        .incumbent()
        .ok_or_else(|| CliError::Data("checkpoint has no accepted iteration".into()))?
        .set;
    let snapshot = read_snapshot_csv(&run_dir.join(SNAPSHOT_FILE))?;
    let emb = read_embedding_csv(&run_dir.join(EMBEDDING_FILE), set)?;
    let bundle = final_report(&state, &snapshot, &emb, &ModelRegistry::with_defaults(), cv_folds)?;
    Ok(bundle.write(&run_dir.join(REPORT_DIR))?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionEntry {
    question: String,
    options: Option<Vec<String>>,
}

/// Reads a JSON array of `{"question": ..., "options": [...]}` objects.
pub fn read_hypotheses(path: &Path) -> Result<HypothesisSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let entries: Vec<QuestionEntry> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(CliError::Config(format!("{}: hypotheses file is empty", path.display())));
    }
    let members = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            Hypothesis::new(&e.question, e.options.unwrap_or_else(default_options), Origin::Seed, 0)
                .map_err(|err| CliError::Config(format!("{}: entry {}: {err}", path.display(), i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    HypothesisSet::new(0, members).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub struct EmbedSummary {
    pub path: PathBuf,
    pub rows: usize,
    pub cols: usize,
    pub endpoint_calls: usize,
}

pub fn cmd_embed(cfg: &RunConfigFile, hypotheses: &Path, offline: bool) -> Result<EmbedSummary, CliError> {
    let set = read_hypotheses(hypotheses)?;
    let prepared = prepare(cfg, offline)?;
    let run_dir = cfg.run_dir();
    let (emb, stats) = embed_dataset(
        &prepared.snapshot.records,
        &set,
        prepared.vision.as_ref(),
        &prepared.cache,
        &prepared.resolver,
        &cfg.embed_settings(),
    )
    .map_err(|(e, _)| CliError::Endpoint(e.to_string()))?;
    log::info!(
        "embedded {} images: {} endpoint calls, {} cached answers",
        stats.images,
        stats.endpoint_calls,
        stats.question_hits
    );
    let path = run_dir.join("embeddings").join(format!("{}.csv", set.set_hash()));
    let ids: Vec<String> = prepared.snapshot.records.iter().map(|r| r.segment_id.clone()).collect();
    write_embedding_csv(&path, &set, &emb, &ids)?;
    Ok(EmbedSummary {
        path,
        rows: emb.rows(),
        cols: emb.cols(),
        endpoint_calls: stats.endpoint_calls,
    })
}
