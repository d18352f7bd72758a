//! Content-addressed answer store with an in-memory front.
//!
//! Two layers share one directory per model:
//!
//! ```text
//! <root>/<model-id>/<kk>/<key>     set-level row: "1,0,?" ('?' = missing)
//! <root>/<model-id>/q/<kk>/<key>   single answer for one (image, question)
//! <root>/<model-id>/index          append-only "<layer> <key>" lines
//! ```
//!
//! `<kk>` is the first two hex characters of the key. Reads may run
//! concurrently; writes are serialized and land via write-then-rename.

use crate::domain::{content_hash, Hypothesis};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

/// Identity of one cached answer row: any change to the image bytes, the
/// set's questions or options, or the model changes the key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VqaCacheKey {
    pub image_hash: String,
    pub set_hash: String,
    pub model: String,
}

impl VqaCacheKey {
    pub fn digest(&self) -> String {
        content_hash(&[
            b"row",
            self.image_hash.as_bytes(),
            self.set_hash.as_bytes(),
            self.model.as_bytes(),
        ])
    }
}

/// Key of the per-(image, question) layer.
pub fn question_key(image_hash: &str, hypothesis: &Hypothesis, model: &str) -> String {
    question_key_for(image_hash, &hypothesis.content_key(), model)
}

/// [`question_key`] with the hypothesis content key already computed.
pub(crate) fn question_key_for(image_hash: &str, content_key: &str, model: &str) -> String {
    content_hash(&[b"question", image_hash.as_bytes(), content_key.as_bytes(), model.as_bytes()])
}

/// Model id made safe for use as a directory name.
pub fn model_dir_name(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn encode_row(row: &[Option<u32>]) -> String {
    row.iter()
        .map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "?".into()))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn decode_row(line: &str) -> Option<Vec<Option<u32>>> {
    let line = line.trim();
    if line.is_empty() {
        return Some(Vec::new());
    }
    line.split(',')
        .map(|t| match t.trim() {
            "?" => Some(None),
            s => s.parse::<u32>().ok().map(Some),
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct AnswerCache {
    root: Option<PathBuf>,
    rows: RwLock<HashMap<(String, String), Vec<Option<u32>>>>,
    answers: RwLock<HashMap<(String, String), u32>>,
    write_lock: Mutex<()>,
}

impl AnswerCache {
    /// Memory-only cache; nothing persists.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root: Some(root),
            ..Self::default()
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn model_dir(&self, model: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(model_dir_name(model)))
    }

    fn row_path(&self, model: &str, key: &str) -> Option<PathBuf> {
        self.model_dir(model).map(|d| d.join(&key[..2]).join(key))
    }

    fn answer_path(&self, model: &str, key: &str) -> Option<PathBuf> {
        self.model_dir(model).map(|d| d.join("q").join(&key[..2]).join(key))
    }

    pub fn get_row(&self, model: &str, key: &str) -> Option<Vec<Option<u32>>> {
        let mem_key = (model.to_string(), key.to_string());
        if let Some(row) = self.rows.read().unwrap().get(&mem_key) {
            return Some(row.clone());
        }
        let text = fs::read_to_string(self.row_path(model, key)?).ok()?;
        let row = decode_row(text.lines().next().unwrap_or(""))?;
        self.rows.write().unwrap().insert(mem_key, row.clone());
        Some(row)
    }

    pub fn get_answer(&self, model: &str, key: &str) -> Option<u32> {
        let mem_key = (model.to_string(), key.to_string());
        if let Some(&v) = self.answers.read().unwrap().get(&mem_key) {
            return Some(v);
        }
        let text = fs::read_to_string(self.answer_path(model, key)?).ok()?;
        let v = text.trim().parse::<u32>().ok()?;
        self.answers.write().unwrap().insert(mem_key, v);
        Some(v)
    }

    pub fn put_row(&self, model: &str, key: &str, row: &[Option<u32>]) -> io::Result<()> {
        self.rows
            .write()
            .unwrap()
            .insert((model.to_string(), key.to_string()), row.to_vec());
        match self.row_path(model, key) {
            Some(path) => self.persist(model, &path, "row", key, &encode_row(row)),
            None => Ok(()),
        }
    }

    pub fn put_answer(&self, model: &str, key: &str, value: u32) -> io::Result<()> {
        self.answers
            .write()
            .unwrap()
            .insert((model.to_string(), key.to_string()), value);
        match self.answer_path(model, key) {
            Some(path) => self.persist(model, &path, "q", key, &value.to_string()),
            None => Ok(()),
        }
    }

    fn persist(&self, model: &str, path: &Path, layer: &str, key: &str, line: &str) -> io::Result<()> {
        let _guard = self.write_lock.lock().unwrap();
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{key}.tmp"));
        fs::write(&tmp, format!("{line}\n"))?;
        fs::rename(&tmp, path)?;
        let index = self.model_dir(model).expect("disk cache").join("index");
        let mut f = OpenOptions::new().create(true).append(true).open(index)?;
        writeln!(f, "{layer} {key}")
    }
}
