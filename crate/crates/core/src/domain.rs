//! Shared domain types: hypotheses, hypothesis sets, embeddings and
//! assessment results. Pure values, no I/O.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("question is empty after trimming")]
    EmptyQuestion,
    #[error("hypothesis {question:?} needs at least two options, got {count}")]
    TooFewOptions { question: String, count: usize },
    #[error("hypothesis {question:?} has an empty or duplicate option {option:?}")]
    BadOption { question: String, option: String },
    #[error("duplicate question in set: {0:?}")]
    DuplicateQuestion(String),
    #[error("hypothesis set expected {expected} members, got {actual}")]
    WrongSetSize { expected: usize, actual: usize },
    #[error("embedding entry ({row}, {col}) = {value} outside option range 0..{options}")]
    EntryOutOfRange {
        row: usize,
        col: usize,
        value: f64,
        options: usize,
    },
    #[error("embedding shape mismatch: {0}")]
    Shape(String),
}

/// Canonical form of a question: lowercased, whitespace collapsed, trailing
/// punctuation stripped. Idempotent.
pub fn normalize_question(text: &str) -> Result<String, DomainError> {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let stripped = collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string();
    if stripped.is_empty() {
        return Err(DomainError::EmptyQuestion);
    }
    Ok(stripped)
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

pub(crate) fn content_hash(parts: &[&[u8]]) -> String {
    sha256_hex(parts)
}

/// Identifier derived from the canonical question, so regenerated identical
/// questions collide.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisId(String);

impl HypothesisId {
    pub fn for_canonical(canonical: &str) -> Self {
        Self(sha256_hex(&[canonical.as_bytes()])[..16].to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Exploit,
    Explore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub question: String,
    pub options: Vec<String>,
    pub origin: Origin,
    pub created_iter: u32,
}

pub fn default_options() -> Vec<String> {
    vec!["no".to_string(), "yes".to_string()]
}

impl Hypothesis {
    /// Builds a hypothesis, validating the question and its option list.
    /// The id is derived from the canonical question text.
    pub fn new(
        question: &str,
        options: Vec<String>,
        origin: Origin,
        created_iter: u32,
    ) -> Result<Self, DomainError> {
        let canonical = normalize_question(question)?;
        let question = question.split_whitespace().collect::<Vec<_>>().join(" ");
        if options.len() < 2 {
            return Err(DomainError::TooFewOptions {
                question,
                count: options.len(),
            });
        }
        let mut seen = HashSet::new();
        for opt in &options {
            if opt.trim().is_empty() || !seen.insert(opt.trim().to_lowercase()) {
                return Err(DomainError::BadOption {
                    question,
                    option: opt.clone(),
                });
            }
        }
        Ok(Self {
            id: HypothesisId::for_canonical(&canonical),
            question,
            options,
            origin,
            created_iter,
        })
    }

    pub fn binary(question: &str, origin: Origin, created_iter: u32) -> Result<Self, DomainError> {
        Self::new(question, default_options(), origin, created_iter)
    }

    pub fn canonical(&self) -> String {
        normalize_question(&self.question).expect("validated at construction")
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    /// Hash over the canonical question and option labels.
    pub fn content_key(&self) -> String {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(self.options.len() + 1);
        let canonical = self.canonical();
        parts.push(canonical.as_bytes());
        for o in &self.options {
            parts.push(o.as_bytes());
        }
        sha256_hex(&parts)
    }
}

/// The working set at one iteration. Members keep their insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub iter: u32,
    pub members: Vec<Hypothesis>,
}

impl HypothesisSet {
    /// Any size, unique ids and canonical questions.
    pub fn new(iter: u32, members: Vec<Hypothesis>) -> Result<Self, DomainError> {
        let mut ids = HashSet::new();
        let mut questions = HashSet::new();
        for h in &members {
            let canonical = h.canonical();
            if !ids.insert(h.id.clone()) || !questions.insert(canonical.clone()) {
                return Err(DomainError::DuplicateQuestion(canonical));
            }
        }
        Ok(Self { iter, members })
    }

    /// Like [`HypothesisSet::new`], additionally enforcing `|members| = k`.
    pub fn with_size(iter: u32, members: Vec<Hypothesis>, k: usize) -> Result<Self, DomainError> {
        if members.len() != k {
            return Err(DomainError::WrongSetSize {
                expected: k,
                actual: members.len(),
            });
        }
        Self::new(iter, members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<HypothesisId> {
        self.members.iter().map(|h| h.id.clone()).collect()
    }

    pub fn contains_question(&self, canonical: &str) -> bool {
        self.members.iter().any(|h| h.canonical() == canonical)
    }

    /// Order-sensitive hash of every member's question and options.
    pub fn set_hash(&self) -> String {
        let keys: Vec<String> = self.members.iter().map(|h| h.content_key()).collect();
        let parts: Vec<&[u8]> = keys.iter().map(|k| k.as_bytes()).collect();
        sha256_hex(&parts)
    }
}

/// n×k answer matrix, row-major. Entry (i, j) is the 0-based option index
/// chosen for hypothesis j on image i; missing entries are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub set_id: String,
    rows: usize,
    cols: usize,
    values: Vec<Option<u32>>,
}

impl EmbeddingMatrix {
    pub fn from_rows(
        set: &HypothesisSet,
        rows: Vec<Vec<Option<u32>>>,
    ) -> Result<Self, DomainError> {
        let cols = set.len();
        let n = rows.len();
        let mut values = Vec::with_capacity(n * cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(DomainError::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (j, v) in row.into_iter().enumerate() {
                if let Some(v) = v {
                    let options = set.members[j].option_count();
                    if v as usize >= options {
                        return Err(DomainError::EntryOutOfRange {
                            row: i,
                            col: j,
                            value: v as f64,
                            options,
                        });
                    }
                }
                values.push(v);
            }
        }
        Ok(Self {
            set_id: set.set_hash(),
            rows: n,
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<u32> {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Option<u32>] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_none()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.values.len() as f64
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            set_id: self.set_id.clone(),
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }

    /// Most frequent answer per column (ties go to the smaller index).
    /// `None` when a column is entirely missing.
    pub fn column_modes(&self) -> Vec<Option<u32>> {
        (0..self.cols)
            .map(|j| {
                let mut counts: Vec<usize> = Vec::new();
                for i in 0..self.rows {
                    if let Some(v) = self.get(i, j) {
                        let v = v as usize;
                        if counts.len() <= v {
                            counts.resize(v + 1, 0);
                        }
                        counts[v] += 1;
                    }
                }
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(v, _)| v as u32)
            })
            .collect()
    }

    /// Dense column-major copy with missing entries replaced by the column
    /// mode computed over this matrix. Fully missing columns become 0.
    pub fn imputed_columns(&self) -> Vec<Vec<f64>> {
        self.imputed_with(&self.column_modes())
    }

    /// Dense column-major copy with missing entries replaced by `modes`
    /// (typically computed on the training rows).
    pub fn imputed_with(&self, modes: &[Option<u32>]) -> Vec<Vec<f64>> {
        (0..self.cols)
            .map(|j| {
                let fill = modes[j].unwrap_or(0) as f64;
                (0..self.rows)
                    .map(|i| self.get(i, j).map(|v| v as f64).unwrap_or(fill))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// Output of fitting the interpretable model to one embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResult {
    /// Intercept first, then one coefficient per feature column.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    /// One two-sided p-value per feature (intercept excluded).
    pub p_values: Vec<f64>,
    /// Per-feature flag: column was linearly dependent and dropped.
    pub aliased: Vec<bool>,
    #[serde(skip)]
    pub fitted: Vec<f64>,
    pub metrics: Metrics,
    pub dof: usize,
}

impl AssessmentResult {
    pub fn feature_count(&self) -> usize {
        self.p_values.len()
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }
}
