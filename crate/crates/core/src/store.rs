//! Per-user library of `(query, embedding, SOP)` triples with
//! threshold-gated nearest-query retrieval.
//!
//! On disk a store is a directory holding one `<user_id>.jsonl` file per user,
//! one [`SopEntry`] per line in insertion order.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::EmbeddingVector;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("threshold {0} outside [-1, 1]")]
    BadThreshold(f64),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("user id `{0}` cannot be used as a store file name")]
    BadUserId(String),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopEntry {
    pub query_text: String,
    pub embedding: EmbeddingVector,
    pub sop: Vec<String>,
}

/// A retrieval hit: the stored query, its SOP, the similarity and the entry's
/// insertion index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub index: usize,
    pub query: String,
    pub sop: Vec<String>,
    pub score: f64,
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch { expected: a.dim(), actual: b.dim() });
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let na = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct SopStore {
    root: Option<PathBuf>,
    threshold: f64,
    dim: usize,
    users: BTreeMap<String, Vec<SopEntry>>,
}

impl SopStore {
    pub fn in_memory(dim: usize, threshold: f64) -> Result<Self, StoreError> {
        check_threshold(threshold)?;
        Ok(SopStore { root: None, threshold, dim, users: BTreeMap::new() })
    }

    /// Opens (creating if needed) a directory-backed store and loads every
    /// `*.jsonl` file in it.
    pub fn open(root: impl Into<PathBuf>, dim: usize, threshold: f64) -> Result<Self, StoreError> {
        check_threshold(threshold)?;
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| StoreError::Io { path: root.clone(), source })?;
        let mut users = BTreeMap::new();
        let listing = std::fs::read_dir(&root).map_err(|source| StoreError::Io { path: root.clone(), source })?;
        for dent in listing {
            let path = dent.map_err(|source| StoreError::Io { path: root.clone(), source })?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(user) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            users.insert(user.to_string(), read_entries(&path, dim)?);
        }
        Ok(SopStore { root: Some(root), threshold, dim, users })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn entries(&self, user: &str) -> &[SopEntry] {
        self.users.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, user: &str, entry: SopEntry) -> Result<(), StoreError> {
        if entry.embedding.dim() != self.dim {
            return Err(StoreError::DimMismatch { expected: self.dim, actual: entry.embedding.dim() });
        }
        if entry.sop.is_empty() {
            return Err(StoreError::InvalidEntry("SOP has no steps".into()));
        }
        if let Some(root) = &self.root {
            check_user_id(user)?;
            let path = root.join(format!("{user}.jsonl"));
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|source| StoreError::Io { path: path.clone(), source })?;
            f.write_all(line.as_bytes()).map_err(|source| StoreError::Io { path, source })?;
        }
        self.users.entry(user.to_string()).or_default().push(entry);
        Ok(())
    }

    /// Most similar stored query for `user` whose similarity strictly exceeds
    /// the threshold. A linear scan that only replaces the current best on a
    /// strictly greater score, so ties resolve to the earliest insertion.
    pub fn retrieve(&self, user: &str, query: &EmbeddingVector) -> Result<Option<Retrieved>, StoreError> {
        self.check_query(query)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries(user).iter().enumerate() {
            let s = cosine_similarity(query, &e.embedding)?;
            if s > self.threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        Ok(best.map(|(i, score)| self.hit(user, i, score)))
    }

    /// Up to `k` entries above the threshold, best first, ties by insertion
    /// index. The first element always equals [`SopStore::retrieve`].
    pub fn retrieve_top_k(&self, user: &str, query: &EmbeddingVector, k: usize) -> Result<Vec<Retrieved>, StoreError> {
        self.check_query(query)?;
        let mut scored = Vec::new();
        for (i, e) in self.entries(user).iter().enumerate() {
            let s = cosine_similarity(query, &e.embedding)?;
            if s > self.threshold {
                scored.push((i, s));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(k).map(|(i, s)| self.hit(user, i, s)).collect())
    }

    fn hit(&self, user: &str, index: usize, score: f64) -> Retrieved {
        let e = &self.entries(user)[index];
        Retrieved { index, query: e.query_text.clone(), sop: e.sop.clone(), score }
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), StoreError> {
        if query.dim() != self.dim {
            return Err(StoreError::DimMismatch { expected: self.dim, actual: query.dim() });
        }
        Ok(())
    }
}

fn check_threshold(t: f64) -> Result<(), StoreError> {
    if (-1.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(StoreError::BadThreshold(t))
    }
}

pub(crate) fn check_user_id(user: &str) -> Result<(), StoreError> {
    let bad = user.is_empty()
        || user.starts_with('.')
        || user.chars().any(|c| matches!(c, '/' | '\\' | '\0') || c.is_control());
    if bad {
        Err(StoreError::BadUserId(user.to_string()))
    } else {
        Ok(())
    }
}

fn read_entries(path: &Path, dim: usize) -> Result<Vec<SopEntry>, StoreError> {
    let f = File::open(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt { path: path.to_path_buf(), line: n + 1, message };
        let entry: SopEntry = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if entry.embedding.dim() != dim {
            return Err(corrupt(format!("embedding dim {} != store dim {dim}", entry.embedding.dim())));
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec())
    }

    fn entry(q: &str, xs: &[f64]) -> SopEntry {
        SopEntry { query_text: q.into(), embedding: v(xs), sop: vec![format!("do {q}")] }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77)), worked by hand
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974632).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])), Err(StoreError::DimMismatch { .. })));
        assert!(matches!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(StoreError::ZeroVector)));
    }

    #[test]
    fn insert_and_order() {
        let mut s = SopStore::in_memory(2, 0.5).unwrap();
        s.insert("u", entry("a", &[1.0, 0.0])).unwrap();
        assert_eq!(s.entries("u").len(), 1);
        s.insert("u", entry("b", &[0.0, 1.0])).unwrap();
        assert_eq!(s.entries("u").iter().map(|e| e.query_text.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(matches!(s.insert("u", entry("c", &[1.0])), Err(StoreError::DimMismatch { .. })));
    }

    #[test]
    fn retrieve_boundaries() {
        let mut s = SopStore::in_memory(2, 0.5).unwrap();
        assert_eq!(s.retrieve("nobody", &v(&[1.0, 0.0])).unwrap(), None);
        // cos 60deg = 0.5 would be exactly the threshold; use a threshold equal
        // to the computed similarity instead so the boundary is exact
        s.insert("u", entry("a", &[1.0, 1.0])).unwrap();
        let q = v(&[1.0, 0.0]);
        let sim = cosine_similarity(&q, &s.entries("u")[0].embedding).unwrap();
        let mut at = SopStore::in_memory(2, sim).unwrap();
        at.insert("u", entry("a", &[1.0, 1.0])).unwrap();
        assert_eq!(at.retrieve("u", &q).unwrap(), None);
        assert_eq!(s.retrieve("u", &q).unwrap().unwrap().query, "a");
    }

    #[test]
    fn ties_resolve_to_first_insertion() {
        // sims against (1,0): 0.2, 0.9, 0.9
        let mut s = SopStore::in_memory(2, 0.5).unwrap();
        let unit = |c: f64| [c, (1.0 - c * c).sqrt()];
        s.insert("u", entry("low", &unit(0.2))).unwrap();
        s.insert("u", entry("first", &unit(0.9))).unwrap();
        s.insert("u", entry("second", &unit(0.9))).unwrap();
        let hit = s.retrieve("u", &v(&[1.0, 0.0])).unwrap().unwrap();
        assert_eq!((hit.index, hit.query.as_str()), (1, "first"));
        assert!((hit.score - 0.9).abs() < 1e-12);
        let top = s.retrieve_top_k("u", &v(&[1.0, 0.0]), 5).unwrap();
        assert_eq!(top.iter().map(|h| h.index).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn retrieval_is_per_user() {
        let mut s = SopStore::in_memory(2, 0.0).unwrap();
        s.insert("alice", entry("a", &[1.0, 0.0])).unwrap();
        assert_eq!(s.retrieve("bob", &v(&[1.0, 0.0])).unwrap(), None);
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SopStore::open(dir.path(), 2, 0.5).unwrap();
        s.insert("u1", entry("a", &[1.0, 0.0])).unwrap();
        s.insert("u1", entry("b", &[0.0, 1.0])).unwrap();
        s.insert("u2", entry("c", &[0.5, 0.5])).unwrap();
        let text = std::fs::read_to_string(dir.path().join("u1.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), r#"{"query_text":"a","embedding":[1.0,0.0],"sop":["do a"]}"#);
        let back = SopStore::open(dir.path(), 2, 0.5).unwrap();
        assert_eq!(back.entries("u1"), s.entries("u1"));
        assert_eq!(back.entries("u2"), s.entries("u2"));
        assert!(matches!(SopStore::open(dir.path(), 3, 0.5), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn rejects_unsafe_user_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SopStore::open(dir.path(), 2, 0.5).unwrap();
        assert!(matches!(s.insert("../x", entry("a", &[1.0, 0.0])), Err(StoreError::BadUserId(_))));
        assert!(matches!(SopStore::in_memory(2, 1.5), Err(StoreError::BadThreshold(_))));
    }

    proptest! {
        #[test]
        fn insertion_order_only_affects_ties(
            vecs in prop::collection::vec(prop::collection::vec(-3i8..=3, 3), 1..12),
            q in prop::collection::vec(-3i8..=3, 3),
            tau in -10i8..=10,
        ) {
            prop_assume!(q.iter().any(|x| *x != 0));
            prop_assume!(vecs.iter().all(|v| v.iter().any(|x| *x != 0)));
            let tau = tau as f64 / 10.0;
            let to_vec = |xs: &Vec<i8>| v(&xs.iter().map(|x| *x as f64).collect::<Vec<_>>());
            let mut fwd = SopStore::in_memory(3, tau).unwrap();
            let mut rev = SopStore::in_memory(3, tau).unwrap();
            for (i, x) in vecs.iter().enumerate() {
                fwd.insert("u", SopEntry { query_text: i.to_string(), embedding: to_vec(x), sop: vec!["s".into()] }).unwrap();
            }
            for (i, x) in vecs.iter().enumerate().rev() {
                rev.insert("u", SopEntry { query_text: i.to_string(), embedding: to_vec(x), sop: vec!["s".into()] }).unwrap();
            }
            let a = fwd.retrieve("u", &to_vec(&q)).unwrap();
            let b = rev.retrieve("u", &to_vec(&q)).unwrap();
            prop_assert_eq!(a.as_ref().map(|h| h.score), b.as_ref().map(|h| h.score));
        }
    }
}
