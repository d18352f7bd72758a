//! Per-image answering of a hypothesis set through a multimodal endpoint.

mod cache;
mod prompt;

use cache::question_key_for;
pub use cache::{decode_row, encode_row, model_dir_name, question_key, AnswerCache, VqaCacheKey};
pub use prompt::{parse_batch_answer, render_batch_prompt, BATCH_TEMPLATE};

use crate::client::{VisionClient, VisionRequest};
use crate::domain::{DomainError, EmbeddingMatrix, Hypothesis, HypothesisSet};
use crate::ingest::SegmentRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VqaError {
    #[error("cannot render a batch prompt for an empty hypothesis set")]
    EmptySet,
    #[error("no integer answer list in reply")]
    NoAnswerList,
    #[error("answer list has {found} entries, expected {expected}")]
    AnswerLength { expected: usize, found: usize },
    #[error("parallelism must be >= 1")]
    Parallelism,
    #[error("missing answer fraction {fraction:.4} exceeds ceiling {ceiling:.4} ({failed_images} images failed)")]
    MissingCeiling {
        fraction: f64,
        ceiling: f64,
        failed_images: usize,
    },
    #[error("cache i/o: {0}")]
    Cache(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Turns an `image_ref` into bytes. References starting with
/// `synthetic://` resolve to their own UTF-8 bytes; anything else is a file
/// path, relative to `base_dir` when not absolute.
#[derive(Debug, Clone, Default)]
pub struct ImageResolver {
    pub base_dir: Option<PathBuf>,
}

pub const SYNTHETIC_SCHEME: &str = "synthetic://";

impl ImageResolver {
    pub fn new(base_dir: Option<PathBuf>) -> Self {
        Self { base_dir }
    }

    pub fn resolve(&self, image_ref: &str) -> std::io::Result<Vec<u8>> {
        if image_ref.starts_with(SYNTHETIC_SCHEME) {
            return Ok(image_ref.as_bytes().to_vec());
        }
        let path = PathBuf::from(image_ref);
        let path = match (&self.base_dir, path.is_absolute()) {
            (Some(base), false) => base.join(path),
            _ => path,
        };
        std::fs::read(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Maximum concurrent endpoint requests.
    pub parallelism: usize,
    /// Largest tolerated fraction of missing entries.
    pub missing_ceiling: f64,
    /// Extra attempts per image after a failed call or unparsable reply.
    pub retries_per_image: u32,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self {
            model: "InternVL2_5-78B".into(),
            temperature: 0.0,
            max_tokens: 512,
            parallelism: 8,
            missing_ceiling: 0.05,
            retries_per_image: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedStats {
    pub images: usize,
    pub endpoint_calls: usize,
    pub row_hits: usize,
    pub question_hits: usize,
    pub question_misses: usize,
    pub failed_images: usize,
}

#[derive(Default)]
struct Counters {
    calls: AtomicUsize,
    row_hits: AtomicUsize,
    question_hits: AtomicUsize,
    question_misses: AtomicUsize,
    failed: AtomicUsize,
}

struct RowJob<'a> {
    set: &'a HypothesisSet,
    set_hash: &'a str,
    content_keys: &'a [String],
    client: &'a dyn VisionClient,
    cache: &'a AnswerCache,
    resolver: &'a ImageResolver,
    settings: &'a EmbedSettings,
    counters: &'a Counters,
}

impl RowJob<'_> {
    fn answer(&self, record: &SegmentRecord) -> Result<Vec<Option<u32>>, VqaError> {
        let model = self.settings.model.as_str();
        let k = self.set.len();
        let bytes = match self.resolver.resolve(&record.image_ref) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("image {} unreadable: {e}", record.image_ref);
                self.counters.failed.fetch_add(1, Ordering::Relaxed);
                return Ok(vec![None; k]);
            }
        };
        let image_hash = hex::encode(Sha256::digest(&bytes));
        let row_key = VqaCacheKey {
            image_hash: image_hash.clone(),
            set_hash: self.set_hash.to_string(),
            model: model.to_string(),
        }
        .digest();
        if let Some(row) = self.cache.get_row(model, &row_key) {
            if row.len() == k {
                self.counters.row_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(row);
            }
        }

        let qkeys: Vec<String> = self
            .content_keys
            .iter()
            .map(|c| question_key_for(&image_hash, c, model))
            .collect();
        let mut row: Vec<Option<u32>> = vec![None; k];
        let mut pending: Vec<usize> = Vec::new();
        for (j, key) in qkeys.iter().enumerate() {
            match self.cache.get_answer(model, key) {
                Some(v) if (v as usize) < self.set.members[j].option_count() => {
                    row[j] = Some(v);
                    self.counters.question_hits.fetch_add(1, Ordering::Relaxed);
                }
                _ => pending.push(j),
            }
        }
        self.counters
            .question_misses
            .fetch_add(pending.len(), Ordering::Relaxed);

        if !pending.is_empty() {
            let members: Vec<Hypothesis> = pending.iter().map(|&j| self.set.members[j].clone()).collect();
            let subset = HypothesisSet::new(self.set.iter, members)?;
            let prompt = render_batch_prompt(&subset)?;
            let request = VisionRequest {
                model,
                prompt: &prompt,
                image: &bytes,
                image_ref: &record.image_ref,
                questions: &subset.members,
                temperature: self.settings.temperature,
                max_tokens: self.settings.max_tokens,
            };
            let mut answers = None;
            for attempt in 0..=self.settings.retries_per_image {
                self.counters.calls.fetch_add(1, Ordering::Relaxed);
                let outcome = self
                    .client
                    .complete(&request)
                    .map_err(|e| e.to_string())
                    .and_then(|reply| parse_batch_answer(&reply, &subset).map_err(|e| e.to_string()));
                match outcome {
                    Ok(a) => {
                        answers = Some(a);
                        break;
                    }
                    Err(e) => log::debug!(
                        "image {} attempt {}: {e}",
                        record.image_ref,
                        attempt + 1
                    ),
                }
            }
            let Some(answers) = answers else {
                log::warn!("image {} left unanswered after retry", record.image_ref);
                self.counters.failed.fetch_add(1, Ordering::Relaxed);
                return Ok(row);
            };
            for (&j, v) in pending.iter().zip(answers) {
                row[j] = v;
                if let Some(v) = v {
                    self.cache
                        .put_answer(model, &qkeys[j], v)
                        .map_err(|e| VqaError::Cache(e.to_string()))?;
                }
            }
        }
        self.cache
            .put_row(model, &row_key, &row)
            .map_err(|e| VqaError::Cache(e.to_string()))?;
        Ok(row)
    }
}

/// Answers `set` for every record, in record order.
///
/// Both cache layers are consulted before any call; only questions without
/// a cached answer are sent, as one batch prompt per image. At most
/// `settings.parallelism` requests are in flight. Images that still fail
/// after the retry stay missing; the call fails only when the overall
/// missing fraction exceeds `settings.missing_ceiling`.
pub fn embed_dataset(
    records: &[SegmentRecord],
    set: &HypothesisSet,
    client: &dyn VisionClient,
    cache: &AnswerCache,
    resolver: &ImageResolver,
    settings: &EmbedSettings,
) -> Result<(EmbeddingMatrix, EmbedStats), (VqaError, EmbedStats)> {
    let counters = Counters::default();
    let snapshot = |c: &Counters| EmbedStats {
        images: records.len(),
        endpoint_calls: c.calls.load(Ordering::Relaxed),
        row_hits: c.row_hits.load(Ordering::Relaxed),
        question_hits: c.question_hits.load(Ordering::Relaxed),
        question_misses: c.question_misses.load(Ordering::Relaxed),
        failed_images: c.failed.load(Ordering::Relaxed),
    };
    if settings.parallelism == 0 {
        return Err((VqaError::Parallelism, EmbedStats::default()));
    }
    if set.is_empty() {
        return Err((VqaError::EmptySet, EmbedStats::default()));
    }
    let set_hash = set.set_hash();
    let content_keys: Vec<String> = set.members.iter().map(Hypothesis::content_key).collect();
    let job = RowJob {
        set,
        set_hash: &set_hash,
        content_keys: &content_keys,
        client,
        cache,
        resolver,
        settings,
        counters: &counters,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallelism)
        .build()
        .map_err(|e| (VqaError::Cache(e.to_string()), EmbedStats::default()))?;
    let rows: Result<Vec<Vec<Option<u32>>>, VqaError> =
        pool.install(|| records.par_iter().map(|r| job.answer(r)).collect());
    let stats = snapshot(&counters);
    let rows = rows.map_err(|e| (e, stats))?;
    let matrix = EmbeddingMatrix::from_rows(set, rows).map_err(|e| (e.into(), stats))?;
    let fraction = matrix.missing_fraction();
    if fraction > settings.missing_ceiling {
        return Err((
            VqaError::MissingCeiling {
                fraction,
                ceiling: settings.missing_ceiling,
                failed_images: stats.failed_images,
            },
            stats,
        ));
    }
    Ok((matrix, stats))
}
