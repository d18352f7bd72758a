//! Segment manifest loading, crash-rate computation and deterministic splits.

use crate::rng::{tag, SplitMix64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("crash rate domain error: {0}")]
    Domain(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("manifest rows invalid:\n{}", .0.join("\n"))]
    Rows(Vec<String>),
    #[error("invalid split configuration: {0}")]
    SplitConfig(String),
    #[error("cannot make {folds} folds from {rows} rows")]
    TooManyFolds { folds: usize, rows: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Crashes per million vehicle-kilometres:
/// `no_crash / (aadt * length_km * 365 / 1e6)`.
pub fn compute_crash_rate(no_crash: f64, aadt: f64, length_km: f64) -> Result<f64, IngestError> {
    if !no_crash.is_finite() || no_crash < 0.0 {
        return Err(IngestError::Domain(format!(
            "crash count must be finite and >= 0, got {no_crash}"
        )));
    }
    if !aadt.is_finite() || aadt <= 0.0 {
        return Err(IngestError::Domain(format!("aadt must be > 0, got {aadt}")));
    }
    if !length_km.is_finite() || length_km <= 0.0 {
        return Err(IngestError::Domain(format!(
            "segment length must be > 0, got {length_km}"
        )));
    }
    Ok(no_crash / (aadt * length_km * 365.0 / 1_000_000.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub image_ref: String,
    pub no_crash: Option<f64>,
    pub aadt: Option<f64>,
    pub length_km: Option<f64>,
    pub crash_rate: f64,
    pub split: Split,
    pub extra_covariates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), IngestError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(IngestError::SplitConfig(format!("{self:?} has a negative ratio")));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(IngestError::SplitConfig(format!("{self:?} does not sum to 1")));
        }
        Ok(())
    }

    /// (train, val, test) record counts for `n` rows.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSnapshot {
    pub records: Vec<SegmentRecord>,
    pub split_counts: SplitCounts,
    pub manifest_hash: String,
}

impl DatasetSnapshot {
    /// Assigns splits to `records` (kept in their given order) by a seeded
    /// Fisher–Yates shuffle of row indices: the first `train` shuffled rows
    /// go to train, the next `val` to val, the rest to test.
    pub fn assign_splits(
        mut records: Vec<SegmentRecord>,
        ratios: SplitRatios,
        seed: u64,
        manifest_hash: String,
    ) -> Result<Self, IngestError> {
        ratios.validate()?;
        let n = records.len();
        let (train, val, _) = ratios.counts(n);
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::for_purpose(seed, tag::SPLIT).shuffle(&mut order);
        for (rank, &row) in order.iter().enumerate() {
            records[row].split = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(Self::from_assigned(records, manifest_hash))
    }

    /// Wraps records whose splits are already set.
    pub fn from_assigned(records: Vec<SegmentRecord>, manifest_hash: String) -> Self {
        let mut split_counts = SplitCounts::default();
        for r in &records {
            match r.split {
                Split::Train => split_counts.train += 1,
                Split::Val => split_counts.val += 1,
                Split::Test => split_counts.test += 1,
            }
        }
        Self {
            records,
            split_counts,
            manifest_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn outcomes(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.records[i].crash_rate).collect()
    }

    /// Sub-snapshot with the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::from_assigned(records, self.manifest_hash.clone())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.records
            .first()
            .map(|r| r.extra_covariates.keys().cloned().collect())
            .unwrap_or_default()
    }
}

const ID_COL: &str = "segment_id";
const IMAGE_COL: &str = "image_ref";
const RATE_COL: &str = "crash_rate";
const TRIPLE: [&str; 3] = ["no_crash", "aadt", "length_km"];

fn parse_number(raw: &str, column: &str, line: usize, problems: &mut Vec<String>) -> Option<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => {
            problems.push(format!("line {line}: column {column}: cannot parse {raw:?} as a number"));
            None
        }
    }
}

/// Loads a comma-separated manifest with a header row.
///
/// Required columns: `segment_id`, `image_ref`, and either `crash_rate` or
/// all of `no_crash`, `aadt`, `length_km`. Any other column is read as a
/// numeric covariate. When both the rate and the triple are present they
/// must agree to 1e-9 relative. Line numbers in errors count the header as
/// line 1.
pub fn load_manifest(
    path: &Path,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSnapshot, IngestError> {
    let bytes = std::fs::read(path)?;
    let manifest_hash = hex::encode(Sha256::digest(&bytes));
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |message: String| IngestError::Manifest {
        path: display.clone(),
        message,
    };
    let id_col = col(ID_COL).ok_or_else(|| missing(format!("missing column {ID_COL}")))?;
    let image_col = col(IMAGE_COL).ok_or_else(|| missing(format!("missing column {IMAGE_COL}")))?;
    let rate_col = col(RATE_COL);
    let triple_cols: Vec<Option<usize>> = TRIPLE.iter().map(|c| col(c)).collect();
    let has_triple = triple_cols.iter().all(Option::is_some);
    if rate_col.is_none() && !has_triple {
        let absent: Vec<&str> = TRIPLE
            .iter()
            .zip(&triple_cols)
            .filter(|(_, c)| c.is_none())
            .map(|(n, _)| *n)
            .collect();
        return Err(missing(format!(
            "need {RATE_COL} or all of no_crash/aadt/length_km (missing {})",
            absent.join(", ")
        )));
    }
    let known: Vec<&str> = [ID_COL, IMAGE_COL, RATE_COL]
        .into_iter()
        .chain(TRIPLE)
        .collect();
    let extra_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !known.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut problems = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = row_idx + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let segment_id = row.get(id_col).unwrap_or("").to_string();
        let image_ref = row.get(image_col).unwrap_or("").to_string();
        if segment_id.is_empty() {
            problems.push(format!("line {line}: empty segment_id"));
        } else if let Some(prev) = first_seen.insert(segment_id.clone(), line) {
            problems.push(format!(
                "line {line}: duplicate segment_id {segment_id:?} (first seen on line {prev})"
            ));
        }
        if image_ref.is_empty() {
            problems.push(format!("line {line}: empty image_ref"));
        }
        let triple: Option<Vec<f64>> = if has_triple {
            triple_cols
                .iter()
                .zip(TRIPLE)
                .map(|(c, name)| parse_number(row.get(c.unwrap()).unwrap_or(""), name, line, &mut problems))
                .collect()
        } else {
            None
        };
        let computed = match &triple {
            Some(t) => match compute_crash_rate(t[0], t[1], t[2]) {
                Ok(v) => Some(v),
                Err(e) => {
                    problems.push(format!("line {line}: {e}"));
                    None
                }
            },
            None => None,
        };
        let explicit = rate_col.and_then(|c| parse_number(row.get(c).unwrap_or(""), RATE_COL, line, &mut problems));
        if let Some(v) = explicit {
            if v < 0.0 {
                problems.push(format!("line {line}: negative crash_rate {v}"));
            }
        }
        let crash_rate = match (explicit, computed) {
            (Some(e), Some(c)) => {
                if (e - c).abs() > 1e-9 * e.abs().max(c.abs()) {
                    problems.push(format!(
                        "line {line}: crash_rate {e} disagrees with computed rate {c}"
                    ));
                }
                Some(e)
            }
            (Some(e), None) => Some(e),
            (None, Some(c)) => Some(c),
            (None, None) => None,
        };
        let mut extra_covariates = BTreeMap::new();
        for (c, name) in &extra_cols {
            if let Some(v) = parse_number(row.get(*c).unwrap_or(""), name, line, &mut problems) {
                extra_covariates.insert(name.clone(), v);
            }
        }
        if let Some(crash_rate) = crash_rate {
            let (no_crash, aadt, length_km) = match &triple {
                Some(t) => (Some(t[0]), Some(t[1]), Some(t[2])),
                None => (None, None, None),
            };
            records.push(SegmentRecord {
                segment_id,
                image_ref,
                no_crash,
                aadt,
                length_km,
                crash_rate,
                split: Split::Train,
                extra_covariates,
            });
        }
    }
    if !problems.is_empty() {
        return Err(IngestError::Rows(problems));
    }
    if records.is_empty() {
        return Err(missing("manifest has no data rows".into()));
    }
    DatasetSnapshot::assign_splits(records, ratios, seed, manifest_hash)
}

/// Seeded k-fold partition of `0..n`. Fold `f` receives `n / folds` rows,
/// plus one extra for the first `n % folds` folds. Returns
/// `(train indices, test indices)` per fold, each sorted ascending.
pub fn kfold_splits(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>, IngestError> {
    if folds < 2 || folds > n {
        return Err(IngestError::TooManyFolds { folds, rows: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::for_purpose(seed, tag::KFOLD).shuffle(&mut order);
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut test: Vec<usize> = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn crash_rate_examples() {
        assert_eq!(compute_crash_rate(0.0, 10_000.0, 1.0).unwrap(), 0.0);
        // 10 / (10000 * 2 * 365 / 1e6) = 10 / 7.3
        let expected = 10.0 / 7.3;
        assert!((compute_crash_rate(10.0, 10_000.0, 2.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.3698630137).abs() < 1e-9);
        assert!(compute_crash_rate(5.0, 0.0, 1.0).is_err());
        assert!(compute_crash_rate(5.0, 100.0, 0.0).is_err());
        assert!(compute_crash_rate(-1.0, 100.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn crash_rate_is_homogeneous(c in 0.0f64..1e4, a in 1.0f64..1e6, l in 0.01f64..100.0) {
            let base = compute_crash_rate(c, a, l).unwrap();
            let doubled_crashes = compute_crash_rate(2.0 * c, a, l).unwrap();
            let doubled_traffic = compute_crash_rate(c, 2.0 * a, l).unwrap();
            prop_assert!(close(doubled_crashes, 2.0 * base, 1e-12) || base == 0.0);
            prop_assert!(close(doubled_traffic, 0.5 * base, 1e-12) || base == 0.0);
        }
    }

    fn write_manifest(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn triple_manifest(n: usize) -> String {
        let mut s = String::from("segment_id,image_ref,no_crash,aadt,length_km\n");
        for i in 0..n {
            s.push_str(&format!("s{i},img/{i}.jpg,{},{},1.5\n", i % 4, 1000 + i * 10));
        }
        s
    }

    #[test]
    fn twenty_rows_split_sixteen_two_two() {
        let f = write_manifest(&triple_manifest(20));
        let snap = load_manifest(f.path(), SplitRatios::default(), 7).unwrap();
        assert_eq!(
            snap.split_counts,
            SplitCounts {
                train: 16,
                val: 2,
                test: 2
            }
        );
        // Independent recomputation of the documented shuffle.
        let mut state: u64 = 7 ^ tag::SPLIT;
        let mut next = || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };
        let mut order: Vec<usize> = (0..20).collect();
        for i in (1..20).rev() {
            let j = ((next() as u128 * (i as u128 + 1)) >> 64) as usize;
            order.swap(i, j);
        }
        for (rank, &row) in order.iter().enumerate() {
            let expected = if rank < 16 {
                Split::Train
            } else if rank < 18 {
                Split::Val
            } else {
                Split::Test
            };
            assert_eq!(snap.records[row].split, expected);
        }
    }

    #[test]
    fn loads_are_reproducible() {
        let f = write_manifest(&triple_manifest(37));
        let a = load_manifest(f.path(), SplitRatios::default(), 11).unwrap();
        let b = load_manifest(f.path(), SplitRatios::default(), 11).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = load_manifest(f.path(), SplitRatios::default(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn explicit_rate_is_used_verbatim() {
        let f = write_manifest("segment_id,image_ref,crash_rate,lanes\na,x.png,3.25,2\nb,y.png,0,4\n");
        let snap = load_manifest(f.path(), SplitRatios::default(), 1).unwrap();
        assert_eq!(snap.records[0].crash_rate, 3.25);
        assert_eq!(snap.records[0].no_crash, None);
        assert_eq!(snap.records[1].extra_covariates["lanes"], 4.0);
    }

    #[test]
    fn disagreeing_rate_and_triple_fail() {
        let ok = write_manifest("segment_id,image_ref,crash_rate,no_crash,aadt,length_km\na,x,1.3698630137,10,10000,2\n");
        assert!(load_manifest(ok.path(), SplitRatios::default(), 1).is_ok());
        let bad = write_manifest("segment_id,image_ref,crash_rate,no_crash,aadt,length_km\na,x,1.5,10,10000,2\n");
        let err = load_manifest(bad.path(), SplitRatios::default(), 1).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn duplicate_ids_name_both_rows() {
        let f = write_manifest("segment_id,image_ref,crash_rate\na,x,1\nb,y,2\na,z,3\n");
        let err = load_manifest(f.path(), SplitRatios::default(), 1).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn missing_columns_and_bad_numbers() {
        let f = write_manifest("segment_id,image_ref,no_crash,aadt\na,x,1,2\n");
        assert!(matches!(
            load_manifest(f.path(), SplitRatios::default(), 1),
            Err(IngestError::Manifest { .. })
        ));
        let f = write_manifest("segment_id,image_ref,crash_rate\na,x,abc\nb,y,1\nc,z,\n");
        let err = load_manifest(f.path(), SplitRatios::default(), 1).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("line 4"), "{err}");
    }

    #[test]
    fn kfold_examples() {
        let folds = kfold_splits(10, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|(_, t)| t.len() == 2));
        let sizes: Vec<usize> = kfold_splits(7, 5, 3).unwrap().iter().map(|(_, t)| t.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1, 1]);
        assert!(kfold_splits(3, 5, 3).is_err());
        assert!(kfold_splits(3, 1, 3).is_err());
    }

    proptest! {
        #[test]
        fn kfold_partitions_rows(n in 2usize..200, folds in 2usize..12, seed in any::<u64>()) {
            prop_assume!(folds <= n);
            let splits = kfold_splits(n, folds, seed).unwrap();
            let mut seen = vec![0u32; n];
            for (train, test) in &splits {
                prop_assert_eq!(train.len() + test.len(), n);
                for &i in test { seen[i] += 1; }
                for &i in train { prop_assert!(!test.contains(&i)); }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
