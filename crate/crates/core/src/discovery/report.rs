//! Final report bundle and the run-directory tables it is rebuilt from.
//!
//! Every file declares its schema on line 1: a `#schema=<name>/<version>`
//! comment for CSV tables, a `schema_version` field for JSON.

use super::run::fit_and_score;
use super::{LoopError, RunState, StopInfo};
use crate::domain::{EmbeddingMatrix, HypothesisSet, Metrics};
use crate::ingest::{kfold_splits, DatasetSnapshot, SegmentRecord, Split};
use crate::stats::{linear_shap, pearson_matrix, CorrelationMatrix, ModelRegistry, ShapReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Correlation magnitude below which two hypotheses count as independent.
const INDEPENDENCE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub schema_version: u32,
    pub run_id: String,
    pub set_hash: String,
    pub stop: Option<StopInfo>,
    pub k: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// In-sample fit on the training split.
    pub train: Metrics,
    pub val: Metrics,
    pub test: Metrics,
    /// Share of hypothesis pairs with |r| < 0.2.
    pub independent_pair_fraction: Option<f64>,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub label: String,
    pub question: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub t_value: f64,
    /// `None` for the intercept.
    pub p_value: Option<f64>,
    pub aliased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub id: String,
    pub question: String,
    pub p_value: f64,
    /// `-log10(p)`, with p floored at the smallest positive normal f64.
    pub neg_log10_p: f64,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPrediction {
    pub segment_id: String,
    pub split: Split,
    pub fold: usize,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub metrics: ReportMetrics,
    pub coefficients: Vec<CoefficientRow>,
    /// Attributions over the test split.
    pub shap: ShapReport,
    pub questions: BTreeMap<String, String>,
    pub correlation_labels: Vec<String>,
    pub correlation: CorrelationMatrix,
    pub significance: Vec<SignificanceRow>,
    pub cv: Option<Vec<CvPrediction>>,
}

pub(crate) fn neg_log10(p: f64) -> f64 {
    -p.max(f64::MIN_POSITIVE).log10()
}

/// Builds the report from a finished run and the full-dataset embedding of
/// its final set (rows in record order). Pure: no endpoint calls.
pub fn final_report(
    state: &RunState,
    snapshot: &DatasetSnapshot,
    embedding: &EmbeddingMatrix,
    models: &ModelRegistry,
    cv_folds: Option<usize>,
) -> Result<ReportBundle, LoopError> {
    let incumbent = state
        .incumbent()
        .ok_or_else(|| LoopError::Report("run has no accepted iteration".into()))?;
    let set = &incumbent.set;
    if embedding.rows() != snapshot.len() || embedding.set_id != set.set_hash() {
        return Err(LoopError::Report(format!(
            "embedding ({} rows, set {}) does not match the run ({} rows, set {})",
            embedding.rows(),
            embedding.set_id,
            snapshot.len(),
            set.set_hash()
        )));
    }
    let model = models.create(&state.config.model)?;
    let train = snapshot.indices_of(Split::Train);
    let val = snapshot.indices_of(Split::Val);
    let test = snapshot.indices_of(Split::Test);
    if test.is_empty() {
        return Err(LoopError::Report("test split is empty".into()));
    }
    let covs = &state.covariates;
    let records = &snapshot.records;
    let on_test = fit_and_score(model.as_ref(), set, embedding, records, &train, &test, covs)?;
    let on_val = fit_and_score(model.as_ref(), set, embedding, records, &train, &val, covs)?;
    let fit = &on_test.fit;
    let k = set.len();

    let mut questions: BTreeMap<String, String> =
        set.members.iter().map(|h| (h.id.to_string(), h.question.clone())).collect();
    for c in covs {
        questions.insert(c.clone(), String::new());
    }
    let labels = on_test.fit_design.labels().to_vec();
    let mut coefficients = vec![CoefficientRow {
        label: "(intercept)".into(),
        question: String::new(),
        coefficient: fit.coefficients[0],
        std_error: fit.std_errors[0],
        t_value: fit.t_values[0],
        p_value: None,
        aliased: false,
    }];
    for (j, label) in labels.iter().enumerate() {
        coefficients.push(CoefficientRow {
            label: label.clone(),
            question: questions.get(label).cloned().unwrap_or_default(),
            coefficient: fit.coefficients[j + 1],
            std_error: fit.std_errors[j + 1],
            t_value: fit.t_values[j + 1],
            p_value: Some(fit.p_values[j]),
            aliased: fit.aliased[j],
        });
    }

    let shap = linear_shap(fit, &on_test.eval_design)?;
    let significance = (0..k)
        .map(|j| SignificanceRow {
            id: labels[j].clone(),
            question: set.members[j].question.clone(),
            p_value: fit.p_values[j],
            neg_log10_p: neg_log10(fit.p_values[j]),
            mean_abs_shap: shap.mean_abs[j],
        })
        .collect();
    let correlation = pearson_matrix(embedding);

    let cv = match cv_folds {
        None => None,
        Some(folds) => {
            let splits = kfold_splits(snapshot.len(), folds, state.config.seed)
                .map_err(|e| LoopError::Report(e.to_string()))?;
            let mut out: Vec<Option<CvPrediction>> = vec![None; snapshot.len()];
            for (fold, (fit_rows, held)) in splits.iter().enumerate() {
                let labels: Vec<String> = set.members.iter().map(|h| h.id.to_string()).collect();
                let modes = embedding.select_rows(fit_rows).column_modes();
                let xf = super::run::build_design(embedding, fit_rows, &modes, &labels, records, covs)?;
                let xh = super::run::build_design(embedding, held, &modes, &labels, records, covs)?;
                let yf: Vec<f64> = fit_rows.iter().map(|&i| records[i].crash_rate).collect();
                let f = model.assess(&xf, &yf)?;
                let yhat = model.predict(&f, &xh)?;
                for (&i, p) in held.iter().zip(yhat) {
                    out[i] = Some(CvPrediction {
                        segment_id: records[i].segment_id.clone(),
                        split: records[i].split,
                        fold,
                        observed: records[i].crash_rate,
                        predicted: p,
                    });
                }
            }
            Some(out.into_iter().map(|p| p.expect("folds cover every row")).collect())
        }
    };

    Ok(ReportBundle {
        metrics: ReportMetrics {
            schema_version: REPORT_SCHEMA_VERSION,
            run_id: state.run_id.clone(),
            set_hash: set.set_hash(),
            stop: state.stop.clone(),
            k,
            n_train: train.len(),
            n_val: val.len(),
            n_test: test.len(),
            train: on_test.fit.metrics,
            val: on_val.metrics,
            test: on_test.metrics,
            independent_pair_fraction: correlation.fraction_below(INDEPENDENCE_THRESHOLD),
            missing_fraction: embedding.missing_fraction(),
        },
        coefficients,
        shap,
        questions,
        correlation_labels: set.members.iter().map(|h| h.id.to_string()).collect(),
        correlation,
        significance,
        cv,
    })
}

/// Shortest round-trip decimal, switching to exponent form for very large
/// or very small magnitudes.
pub(crate) fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-6..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn table(schema: &str, extra: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, LoopError> {
    let mut buf = format!("#schema={schema}/{REPORT_SCHEMA_VERSION}{extra}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        let io = |e: csv::Error| LoopError::Report(e.to_string());
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LoopError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

impl ReportBundle {
    /// Writes the bundle into `dir` and returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, LoopError> {
        let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
        let mut metrics = serde_json::to_vec_pretty(&self.metrics).expect("metrics serialize");
        metrics.push(b'\n');
        files.push(("metrics.json", metrics));

        files.push((
            "coefficients.csv",
            table(
                "coefficients",
                "",
                &["label", "question", "coefficient", "std_error", "t_value", "p_value", "aliased"],
                self.coefficients
                    .iter()
                    .map(|c| {
                        vec![
                            c.label.clone(),
                            c.question.clone(),
                            fmt_f64(c.coefficient),
                            fmt_f64(c.std_error),
                            fmt_f64(c.t_value),
                            c.p_value.map(fmt_f64).unwrap_or_else(|| "NA".into()),
                            c.aliased.to_string(),
                        ]
                    })
                    .collect(),
            )?,
        ));

        files.push((
            "shap_ranking.csv",
            table(
                "shap_ranking",
                "",
                &["rank", "label", "question", "mean_abs_shap"],
                self.shap
                    .ranking
                    .iter()
                    .enumerate()
                    .map(|(r, &j)| {
                        let label = &self.shap.labels[j];
                        vec![
                            (r + 1).to_string(),
                            label.clone(),
                            self.questions.get(label).cloned().unwrap_or_default(),
                            fmt_f64(self.shap.mean_abs[j]),
                        ]
                    })
                    .collect(),
            )?,
        ));

        let mut header = vec!["label"];
        header.extend(self.correlation_labels.iter().map(String::as_str));
        files.push((
            "correlation.csv",
            table(
                "correlation",
                "",
                &header,
                self.correlation_labels
                    .iter()
                    .enumerate()
                    .map(|(i, label)| {
                        std::iter::once(label.clone())
                            .chain(
                                (0..self.correlation.size())
                                    .map(|j| self.correlation.get(i, j).map(fmt_f64).unwrap_or_else(|| "NA".into())),
                            )
                            .collect()
                    })
                    .collect(),
            )?,
        ));

        files.push((
            "significance_vs_shap.csv",
            table(
                "significance_vs_shap",
                "",
                &["id", "question", "p_value", "neg_log10_p", "mean_abs_shap"],
                self.significance
                    .iter()
                    .map(|s| {
                        vec![
                            s.id.clone(),
                            s.question.clone(),
                            fmt_f64(s.p_value),
                            fmt_f64(s.neg_log10_p),
                            fmt_f64(s.mean_abs_shap),
                        ]
                    })
                    .collect(),
            )?,
        ));

        if let Some(cv) = &self.cv {
            files.push((
                "cv_predictions.csv",
                table(
                    "cv_predictions",
                    "",
                    &["segment_id", "split", "fold", "observed", "predicted"],
                    cv.iter()
                        .map(|p| {
                            vec![
                                p.segment_id.clone(),
                                p.split.as_str().to_string(),
                                p.fold.to_string(),
                                fmt_f64(p.observed),
                                fmt_f64(p.predicted),
                            ]
                        })
                        .collect(),
                )?,
            ));
        }

        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Splits a `#schema=...` first line into its key/value tokens and returns
/// them with the remaining text.
fn schema_line<'a>(text: &'a str, schema: &str, path: &Path) -> Result<(BTreeMap<&'a str, &'a str>, &'a str), LoopError> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let tokens: BTreeMap<&str, &str> = first
        .trim_start_matches('#')
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .collect();
    let expected = format!("{schema}/{REPORT_SCHEMA_VERSION}");
    match tokens.get("schema") {
        Some(s) if *s == expected => Ok((tokens, rest)),
        Some(s) => Err(LoopError::Checkpoint(format!(
            "{}: schema {s} is not supported (expected {expected})",
            path.display()
        ))),
        None => Err(LoopError::Checkpoint(format!(
            "{}: line 1 lacks a schema declaration (expected #schema={expected})",
            path.display()
        ))),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> LoopError + '_ {
    move |e| LoopError::Checkpoint(format!("{}: {e}", path.display()))
}

/// Records and splits as the run saw them.
pub fn write_snapshot_csv(path: &Path, snapshot: &DatasetSnapshot) -> Result<(), LoopError> {
    let covs = snapshot.covariate_names();
    let mut header = vec!["segment_id", "image_ref", "no_crash", "aadt", "length_km", "crash_rate", "split"];
    header.extend(covs.iter().map(String::as_str));
    let rows = snapshot
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.segment_id.clone(),
                r.image_ref.clone(),
                opt(r.no_crash),
                opt(r.aadt),
                opt(r.length_km),
                fmt_f64(r.crash_rate),
                r.split.as_str().to_string(),
            ];
            row.extend(covs.iter().map(|c| opt(r.extra_covariates.get(c).copied())));
            row
        })
        .collect();
    let extra = format!(" manifest_hash={}", snapshot.manifest_hash);
    write_atomic(path, &table("snapshot", &extra, &header, rows)?)
}

pub fn read_snapshot_csv(path: &Path) -> Result<DatasetSnapshot, LoopError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LoopError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (tokens, body) = schema_line(&text, "snapshot", path)?;
    let manifest_hash = tokens.get("manifest_hash").copied().unwrap_or_default().to_string();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    let bad = |m: String| LoopError::Checkpoint(format!("{}: {m}", path.display()));
    let num = |s: &str| -> Result<Option<f64>, LoopError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
        }
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        if row.len() < 7 {
            return Err(bad("short row".into()));
        }
        let mut extra_covariates = BTreeMap::new();
        for (name, v) in headers.iter().zip(row.iter()).skip(7) {
            if let Some(v) = num(v)? {
                extra_covariates.insert(name.to_string(), v);
            }
        }
        records.push(SegmentRecord {
            segment_id: row[0].to_string(),
            image_ref: row[1].to_string(),
            no_crash: num(&row[2])?,
            aadt: num(&row[3])?,
            length_km: num(&row[4])?,
            crash_rate: num(&row[5])?.ok_or_else(|| bad("missing crash_rate".into()))?,
            split: Split::parse(&row[6]).ok_or_else(|| bad(format!("bad split {:?}", &row[6])))?,
            extra_covariates,
        });
    }
    Ok(DatasetSnapshot::from_assigned(records, manifest_hash))
}

/// Embedding rows keyed by segment id; missing answers are empty cells.
pub fn write_embedding_csv(
    path: &Path,
    set: &HypothesisSet,
    embedding: &EmbeddingMatrix,
    segment_ids: &[String],
) -> Result<(), LoopError> {
    if segment_ids.len() != embedding.rows() {
        return Err(LoopError::Report(format!(
            "{} segment ids for {} embedding rows",
            segment_ids.len(),
            embedding.rows()
        )));
    }
    let ids: Vec<String> = set.members.iter().map(|h| h.id.to_string()).collect();
    let mut header = vec!["segment_id"];
    header.extend(ids.iter().map(String::as_str));
    let rows = segment_ids
        .iter()
        .enumerate()
        .map(|(i, sid)| {
            std::iter::once(sid.clone())
                .chain(embedding.row(i).iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))
                .collect()
        })
        .collect();
    let extra = format!(" set_hash={}", set.set_hash());
    write_atomic(path, &table("embedding", &extra, &header, rows)?)
}

pub fn read_embedding_csv(path: &Path, set: &HypothesisSet) -> Result<EmbeddingMatrix, LoopError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LoopError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (tokens, body) = schema_line(&text, "embedding", path)?;
    let bad = |m: String| LoopError::Checkpoint(format!("{}: {m}", path.display()));
    if tokens.get("set_hash").copied() != Some(set.set_hash().as_str()) {
        return Err(bad("set_hash does not match the checkpointed set".into()));
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err(path))?;
        let values = row
            .iter()
            .skip(1)
            .map(|v| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse::<u32>().map(Some).map_err(|_| bad(format!("bad answer {v:?}")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    Ok(EmbeddingMatrix::from_rows(set, rows)?)
}
