use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::dataset::LabeledImageSet;
use crate::error::{Error, Result};
use crate::nn::{Embedding, Model};

/// Per-symbol share of the `k` nearest neighbours: `weight(s) = count(s) / k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMap<S: Ord> {
    counts: BTreeMap<S, usize>,
    k: usize,
}

impl<S: Ord + Clone> SupportMap<S> {
    /// Builds a map from neighbour counts. Zero counts are dropped.
    pub fn from_counts(counts: impl IntoIterator<Item = (S, usize)>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        let mut map = BTreeMap::new();
        for (s, c) in counts {
            if c > 0 {
                *map.entry(s).or_insert(0) += c;
            }
        }
        let total: usize = map.values().sum();
        if total > k {
            return Err(Error::Parameter(format!(
                "{total} neighbours counted but k = {k}"
            )));
        }
        Ok(Self { counts: map, k })
    }

    /// Map with no support for anything (used for empty cells).
    pub fn empty(k: usize) -> Self {
        Self {
            counts: BTreeMap::new(),
            k: k.max(1),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, symbol: &S) -> usize {
        self.counts.get(symbol).copied().unwrap_or(0)
    }

    /// Confidence for `symbol`; absent symbols have zero support.
    pub fn weight(&self, symbol: &S) -> f64 {
        self.count(symbol) as f64 / self.k as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, f64)> + '_ {
        self.counts
            .iter()
            .map(move |(s, &c)| (s, c as f64 / self.k as f64))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sum of all weights, computed from the counts so a full neighbourhood
    /// sums to exactly 1.
    pub fn total(&self) -> f64 {
        self.counts.values().sum::<usize>() as f64 / self.k as f64
    }

    /// Symbols by descending support, ties by symbol order.
    pub fn ranked(&self) -> Vec<(S, f64)> {
        let mut v: Vec<(S, f64)> = self.iter().map(|(s, w)| (s.clone(), w)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn best(&self) -> Option<(S, f64)> {
        self.ranked().into_iter().next()
    }

    /// Support restricted to the symbols accepted by `keep`.
    pub fn restricted(&self, mut keep: impl FnMut(&S) -> bool) -> Self {
        Self {
            counts: self
                .counts
                .iter()
                .filter(|(s, _)| keep(s))
                .map(|(s, &c)| (s.clone(), c))
                .collect(),
            k: self.k,
        }
    }
}

impl<S: Ord + Clone + ToString> Serialize for SupportMap<S> {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> Result<Ser::Ok, Ser::Error> {
        let mut map = serializer.serialize_map(Some(self.counts.len()))?;
        for (s, w) in self.iter() {
            map.serialize_entry(&s.to_string(), &w)?;
        }
        map.end()
    }
}

/// `weight(symbol) ≥ c_l`; an absent symbol has zero support.
pub fn is_globally_consistent<S: Ord + Clone>(support: &SupportMap<S>, symbol: &S, c_l: f64) -> bool {
    support.weight(symbol) >= c_l
}

/// Training embeddings with their tags, searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    embeddings: Vec<f64>,
    tags: Vec<u8>,
    k_default: usize,
}

const INDEX_MAGIC: &[u8; 4] = b"SLXI";
const INDEX_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 1000;

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            embeddings: Vec::new(),
            tags: Vec::new(),
            k_default: DEFAULT_K,
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Embedding, u8)>) -> Result<Self> {
        let mut iter = entries.into_iter().peekable();
        let dim = iter.peek().map(|(e, _)| e.len()).unwrap_or(0);
        let mut index = Self::new(dim);
        for (e, t) in iter {
            index.push(e, t)?;
        }
        Ok(index)
    }

    pub fn push(&mut self, embedding: Embedding, tag: u8) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(Error::Input(format!(
                "embedding has {} values, index holds {}-d embeddings",
                embedding.len(),
                self.dim
            )));
        }
        if embedding.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("embedding has non-finite values".into()));
        }
        self.embeddings.extend_from_slice(embedding.as_slice());
        self.tags.push(tag);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_default(&self) -> usize {
        self.k_default
    }

    pub fn with_k_default(mut self, k: usize) -> Self {
        self.k_default = k;
        self
    }

    pub fn tag(&self, ordinal: usize) -> u8 {
        self.tags[ordinal]
    }

    pub fn embedding(&self, ordinal: usize) -> &[f64] {
        &self.embeddings[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    /// The `k` nearest entries as `(ordinal, distance)`, closest first; equal
    /// distances are ordered by ordinal.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if query.len() != self.dim {
            return Err(Error::Parameter(format!(
                "query has {} values, index holds {}-d embeddings",
                query.len(),
                self.dim
            )));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Parameter(format!(
                "k = {k} must be in 1..={}",
                self.len()
            )));
        }
        let mut scored: Vec<(usize, f64)> = self
            .embeddings
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, e)| (i, euclidean(query, e)))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (self.dim * 8 + 1));
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.k_default as u32).to_le_bytes());
        for i in 0..self.len() {
            for v in self.embedding(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(self.tags[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |offset: usize, message: &str| Error::Format {
            path: origin.to_path_buf(),
            offset,
            message: message.to_string(),
        };
        let u32_at = |offset: usize| -> Result<u32> {
            bytes
                .get(offset..offset + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| fail(bytes.len(), "unexpected end of file"))
        };
        if bytes.get(..4) != Some(INDEX_MAGIC.as_slice()) {
            return Err(fail(0, "not an index file (bad magic)"));
        }
        let version = u32_at(4)?;
        if version != INDEX_VERSION {
            return Err(fail(4, &format!("unsupported index version {version}")));
        }
        let count = u32_at(8)? as usize;
        let dim = u32_at(12)? as usize;
        let k_default = u32_at(16)? as usize;
        let record = dim * 8 + 1;
        let expected = 20 + count * record;
        if bytes.len() != expected {
            return Err(fail(
                bytes.len().min(expected),
                &format!("expected {expected} bytes for {count} entries, found {}", bytes.len()),
            ));
        }
        let mut index = Self::new(dim).with_k_default(k_default);
        index.embeddings.reserve(count * dim);
        for rec in bytes[20..].chunks_exact(record) {
            for v in rec[..dim * 8].chunks_exact(8) {
                index
                    .embeddings
                    .push(f64::from_le_bytes(v.try_into().expect("8 bytes")));
            }
            index.tags.push(rec[dim * 8]);
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Embeds every training image; entry `i` is tagged with label `i`.
pub fn build_index(model: &Model, training: &LabeledImageSet) -> Result<EmbeddingIndex> {
    if training.is_empty() {
        return Err(Error::Input("cannot index an empty training set".into()));
    }
    let mut index = EmbeddingIndex::new(model.embedding_dim());
    for (image, label) in training.iter() {
        index.push(model.embed(image)?, label)?;
    }
    Ok(index)
}

/// Share of each tag among the `k` nearest training embeddings.
pub fn global_support(index: &EmbeddingIndex, query: &Embedding, k: usize) -> Result<SupportMap<u8>> {
    let neighbours = index.nearest(query.as_slice(), k)?;
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for (ordinal, _) in neighbours {
        *counts.entry(index.tag(ordinal)).or_insert(0) += 1;
    }
    SupportMap::from_counts(counts, k)
}
