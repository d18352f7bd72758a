use super::state::{
    save_checkpoint, AbortInfo, AbortKind, AttemptRecord, EventLog, IterationRecord, PrunedEntry, RunState,
    StopInfo, StopReason,
};
use super::{LoopConfig, LoopError};
use crate::client::{ChatClient, VisionClient};
use crate::domain::{content_hash, AssessmentResult, EmbeddingMatrix, HypothesisSet, Metrics};
use crate::hypogen::{choose_prompt_mode, generate_replacements, GenerationRequest, GenerationSettings, PromptMode};
use crate::ingest::{DatasetSnapshot, SegmentRecord, Split};
use crate::rng::{tag, SplitMix64};
use crate::stats::{adjust_p_values, prediction_metrics, DesignMatrix, InterpretableModel, ModelRegistry, StatsError};
use crate::vqa::{embed_dataset, AnswerCache, EmbedSettings, EmbedStats, ImageResolver};
use serde_json::json;
use std::path::Path;
use std::sync::Arc;

/// Everything the loop talks to besides its configuration.
pub struct LoopContext<'a> {
    pub snapshot: &'a DatasetSnapshot,
    pub chat: &'a dyn ChatClient,
    pub vision: &'a dyn VisionClient,
    pub cache: &'a AnswerCache,
    pub resolver: &'a ImageResolver,
    pub models: &'a ModelRegistry,
    pub generation: &'a GenerationSettings,
    pub embedding: &'a EmbedSettings,
    /// Checkpoint and event log destination; `None` keeps the run in memory.
    pub run_dir: Option<&'a Path>,
}

/// Design matrix over `rows` of `emb`: mode-imputed hypothesis columns with
/// the given modes, then covariates taken from the aligned `records`.
pub(crate) fn build_design(
    emb: &EmbeddingMatrix,
    rows: &[usize],
    modes: &[Option<u32>],
    labels: &[String],
    records: &[SegmentRecord],
    covariates: &[String],
) -> Result<DesignMatrix, StatsError> {
    let mut features = emb.select_rows(rows).imputed_with(modes);
    let mut labels = labels.to_vec();
    for name in covariates {
        labels.push(name.clone());
        features.push(
            rows.iter()
                .map(|&i| records[i].extra_covariates.get(name).copied().unwrap_or(f64::NAN))
                .collect(),
        );
    }
    DesignMatrix::with_intercept(features, labels)
}

pub(crate) struct Scored {
    pub fit: AssessmentResult,
    pub metrics: Metrics,
    pub fit_design: DesignMatrix,
    pub eval_design: DesignMatrix,
}

/// Fits on `fit_rows` and scores on `eval_rows`; imputation modes come from
/// the fitting rows only.
pub(crate) fn fit_and_score(
    model: &dyn InterpretableModel,
    set: &HypothesisSet,
    emb: &EmbeddingMatrix,
    records: &[SegmentRecord],
    fit_rows: &[usize],
    eval_rows: &[usize],
    covariates: &[String],
) -> Result<Scored, StatsError> {
    let labels: Vec<String> = set.members.iter().map(|h| h.id.to_string()).collect();
    let modes = emb.select_rows(fit_rows).column_modes();
    let fit_design = build_design(emb, fit_rows, &modes, &labels, records, covariates)?;
    let eval_design = build_design(emb, eval_rows, &modes, &labels, records, covariates)?;
    let y_fit: Vec<f64> = fit_rows.iter().map(|&i| records[i].crash_rate).collect();
    let y_eval: Vec<f64> = eval_rows.iter().map(|&i| records[i].crash_rate).collect();
    let fit = model.assess(&fit_design, &y_fit)?;
    let yhat = model.predict(&fit, &eval_design)?;
    let metrics = prediction_metrics(&y_eval, &yhat)?;
    Ok(Scored {
        fit,
        metrics,
        fit_design,
        eval_design,
    })
}

enum EvalFailure {
    Embed(String),
    Stats(StatsError),
}

/// Train and validation rows, embedded together in one call.
struct Evaluator<'a> {
    ctx: &'a LoopContext<'a>,
    model: Arc<dyn InterpretableModel>,
    records: Vec<SegmentRecord>,
    train_rows: Vec<usize>,
    val_rows: Vec<usize>,
    covariates: Vec<String>,
}

impl Evaluator<'_> {
    fn evaluate(&self, set: &HypothesisSet) -> Result<(AssessmentResult, Metrics, EmbedStats), (EvalFailure, EmbedStats)> {
        let (emb, stats) = embed_dataset(
            &self.records,
            set,
            self.ctx.vision,
            self.ctx.cache,
            self.ctx.resolver,
            self.ctx.embedding,
        )
        .map_err(|(e, s)| (EvalFailure::Embed(e.to_string()), s))?;
        let scored = fit_and_score(
            self.model.as_ref(),
            set,
            &emb,
            &self.records,
            &self.train_rows,
            &self.val_rows,
            &self.covariates,
        )
        .map_err(|e| (EvalFailure::Stats(e), stats))?;
        Ok((scored.fit, scored.metrics, stats))
    }
}

fn run_id(config: &LoopConfig, snapshot: &DatasetSnapshot) -> String {
    let cfg = serde_json::to_string(config).expect("config serializes");
    content_hash(&[cfg.as_bytes(), snapshot.manifest_hash.as_bytes()])[..12].to_string()
}

struct Runner<'a> {
    state: RunState,
    events: EventLog,
    run_dir: Option<&'a Path>,
}

impl Runner<'_> {
    fn checkpoint(&self) -> Result<(), LoopError> {
        match self.run_dir {
            Some(dir) => save_checkpoint(dir, &self.state),
            None => Ok(()),
        }
    }

    fn push(&mut self, record: IterationRecord) -> Result<(), LoopError> {
        self.events.emit(json!({
            "event": "iteration",
            "t": record.t,
            "accepted": record.accepted,
            "m_pruned": record.m_pruned,
            "pruned": record.pruned.iter().map(|p| p.id.to_string()).collect::<Vec<_>>(),
            "set_hash": record.set.set_hash(),
            "val_metrics": record.val_metrics,
            "patience_used": record.patience_used,
        }))?;
        self.state.iterations.push(record);
        self.checkpoint()
    }

    fn stop(&mut self, reason: StopReason, iteration: u32) -> Result<(), LoopError> {
        self.state.stop = Some(StopInfo { reason, iteration });
        self.events.emit(json!({ "event": "stop", "reason": reason, "t": iteration }))?;
        self.checkpoint()
    }

    fn abort(&mut self, iteration: u32, kind: AbortKind, message: String) -> LoopError {
        self.state.abort = Some(AbortInfo {
            iteration,
            kind,
            message: message.clone(),
        });
        let logged = self
            .events
            .emit(json!({ "event": "abort", "t": iteration, "kind": kind, "message": message }));
        if let Err(e) = logged.and_then(|_| self.checkpoint()) {
            log::error!("could not record abort: {e}");
        }
        LoopError::Aborted {
            iteration,
            kind,
            message,
            state: Box::new(self.state.clone()),
        }
    }

    fn fail(&mut self, iteration: u32, failure: EvalFailure) -> LoopError {
        match failure {
            EvalFailure::Embed(message) => self.abort(iteration, AbortKind::Embedding, message),
            EvalFailure::Stats(e) => e.into(),
        }
    }
}

/// Runs the loop to a stop condition.
///
/// t = 0 bootstraps a set of k hypotheses and makes it the incumbent. Each
/// later iteration prunes the incumbent's hypotheses with p > alpha, asks for
/// as many replacements, and accepts the candidate only if it strictly
/// improves the validation metric; a rejected candidate is redrawn up to
/// `retries_per_iter` times before the incumbent is carried forward. The
/// run stops after `max_iters`, when nothing is prunable, or after
/// `patience` consecutive iterations without improvement. Generation or
/// embedding failures abort the run after checkpointing.
pub fn run(config: &LoopConfig, ctx: &LoopContext<'_>) -> Result<RunState, LoopError> {
    config.validate()?;
    let model = ctx.models.create(&config.model)?;
    let snapshot = ctx.snapshot;
    let train = snapshot.indices_of(Split::Train);
    let val = snapshot.indices_of(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(LoopError::Data(format!(
            "train and val splits must be nonempty (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let k = config.k;
    let records: Vec<SegmentRecord> = train.iter().chain(&val).map(|&i| snapshot.records[i].clone()).collect();
    let covariates = snapshot.covariate_names();
    let eval = Evaluator {
        ctx,
        model,
        records,
        train_rows: (0..train.len()).collect(),
        val_rows: (train.len()..train.len() + val.len()).collect(),
        covariates: covariates.clone(),
    };
    let mut runner = Runner {
        state: RunState {
            run_id: run_id(config, snapshot),
            config: config.clone(),
            dataset_hash: snapshot.manifest_hash.clone(),
            split_counts: snapshot.split_counts,
            covariates,
            iterations: Vec::new(),
            stop: None,
            abort: None,
        },
        events: match ctx.run_dir {
            Some(dir) => EventLog::create(dir)?,
            None => EventLog::disabled(),
        },
        run_dir: ctx.run_dir,
    };
    runner.events.emit(json!({
        "event": "start",
        "run_id": runner.state.run_id,
        "config": config,
        "dataset_hash": snapshot.manifest_hash,
    }))?;

    let seed_req = GenerationRequest::bootstrap(k, config.alpha, &config.domain_context);
    let members = match generate_replacements(&seed_req, ctx.chat, ctx.generation) {
        Ok(m) => m,
        Err(e) => return Err(runner.abort(0, AbortKind::Generation, e.to_string())),
    };
    let set = HypothesisSet::with_size(0, members, k)?;
    let (fit, val_metrics, stats) = match eval.evaluate(&set) {
        Ok(v) => v,
        Err((f, _)) => return Err(runner.fail(0, f)),
    };
    runner.push(IterationRecord {
        t: 0,
        attempts: vec![AttemptRecord {
            mode: PromptMode::Seed,
            new_ids: set.ids(),
            val_metrics,
            accepted: true,
            endpoint_calls: stats.endpoint_calls,
            question_misses: stats.question_misses,
        }],
        set,
        assessment: fit,
        val_metrics,
        accepted: true,
        m_pruned: 0,
        pruned: Vec::new(),
        patience_used: 0,
    })?;

    let mut mode_rng = SplitMix64::for_purpose(config.seed, tag::PROMPT_MODE);
    let mut patience = 0u32;
    for t in 1..=config.max_iters {
        let incumbent = runner.state.incumbent().expect("t = 0 recorded").clone();
        let p = adjust_p_values(&incumbent.assessment.p_values[..k], config.correction);
        let (kept, pruned): (Vec<usize>, Vec<usize>) = (0..k).partition(|&j| p[j] <= config.alpha);
        if pruned.is_empty() {
            runner.stop(StopReason::AllSignificant, t)?;
            return Ok(runner.state);
        }
        let pruned_entries: Vec<PrunedEntry> = pruned
            .iter()
            .map(|&j| PrunedEntry {
                id: incumbent.set.members[j].id.clone(),
                question: incumbent.set.members[j].question.clone(),
                p_value: p[j],
            })
            .collect();

        let mut attempts = Vec::new();
        let mut winner = None;
        for _ in 0..=config.retries_per_iter {
            let mode = choose_prompt_mode(&mut mode_rng, config.p_explore);
            let req = GenerationRequest {
                prior_set: incumbent.set.clone(),
                prior_pvalues: p.clone(),
                m_new: pruned.len(),
                mode,
                domain_context: config.domain_context.clone(),
                alpha: config.alpha,
                set_size: k,
                iteration: t,
            };
            let fresh = match generate_replacements(&req, ctx.chat, ctx.generation) {
                Ok(h) => h,
                Err(e) => return Err(runner.abort(t, AbortKind::Generation, e.to_string())),
            };
            let new_ids = fresh.iter().map(|h| h.id.clone()).collect();
            let members = kept
                .iter()
                .map(|&j| incumbent.set.members[j].clone())
                .chain(fresh)
                .collect();
            let candidate = HypothesisSet::with_size(t, members, k)?;
            let (fit, metrics, stats) = match eval.evaluate(&candidate) {
                Ok(v) => v,
                Err((f, _)) => return Err(runner.fail(t, f)),
            };
            let better = config.accept_metric.improves(&metrics, &incumbent.val_metrics);
            runner.events.emit(json!({
                "event": "attempt",
                "t": t,
                "mode": mode,
                "accepted": better,
                "val_metrics": metrics,
                "question_misses": stats.question_misses,
            }))?;
            attempts.push(AttemptRecord {
                mode,
                new_ids,
                val_metrics: metrics,
                accepted: better,
                endpoint_calls: stats.endpoint_calls,
                question_misses: stats.question_misses,
            });
            if better {
                winner = Some((candidate, fit, metrics));
                break;
            }
        }

        let record = match winner {
            Some((set, assessment, val_metrics)) => {
                patience = 0;
                IterationRecord {
                    t,
                    set,
                    assessment,
                    val_metrics,
                    accepted: true,
                    m_pruned: pruned.len(),
                    pruned: pruned_entries,
                    attempts,
                    patience_used: patience,
                }
            }
            None => {
                patience += 1;
                IterationRecord {
                    t,
                    accepted: false,
                    m_pruned: pruned.len(),
                    pruned: pruned_entries,
                    attempts,
                    patience_used: patience,
                    ..incumbent
                }
            }
        };
        runner.push(record)?;
        if patience >= config.patience {
            runner.stop(StopReason::PatienceExhausted, t)?;
            return Ok(runner.state);
        }
    }
    runner.stop(StopReason::MaxIters, config.max_iters)?;
    Ok(runner.state)
}

/// Embeds the whole dataset, in record order, against the final incumbent.
pub fn final_embedding(state: &RunState, ctx: &LoopContext<'_>) -> Result<EmbeddingMatrix, LoopError> {
    let incumbent = state
        .incumbent()
        .ok_or_else(|| LoopError::Report("run has no accepted iteration".into()))?;
    embed_dataset(
        &ctx.snapshot.records,
        &incumbent.set,
        ctx.vision,
        ctx.cache,
        ctx.resolver,
        ctx.embedding,
    )
    .map(|(emb, _)| emb)
    .map_err(|(e, _)| LoopError::Data(format!("final embedding: {e}")))
}
