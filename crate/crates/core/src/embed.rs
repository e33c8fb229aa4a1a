//! Text embeddings and cosine similarity.
//!
//! [`HashedFeatureEmbedder`] is the built-in provider: lowercase word tokens
//! and per-word character trigrams hashed with a signed hash into a fixed
//! number of buckets, count-weighted and L2-normalized. [`RemoteEmbedder`]
//! talks to an external encoder over HTTP.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::refstore::{ReferenceCorpus, ReferenceObject};
use crate::{Error, Result};

pub const DEFAULT_DIMS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector {
            values,
            normalized: false,
        }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalize(mut self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        self.values.iter_mut().for_each(|v| *v /= norm);
        self.normalized = true;
        Ok(self)
    }
}

/// A source of sentence embeddings. `embed` must be deterministic per text.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
}

/// Embeds a single text, returning an L2-normalized vector.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    provider
        .embed_batch(&[text])?
        .pop()
        .ok_or_else(|| Error::ProviderMalformed("no vector returned".into()))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    if a.normalized && b.normalized {
        return Ok(dot.clamp(-1.0, 1.0));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

// FNV-1a, 64-bit, with a fixed offset so bucket assignments never change
// across runs, platforms or releases.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325 ^ 0x7065_7273_7065_6374;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(kind: u8, feature: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in std::iter::once(kind).chain(feature.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Deterministic hashed word + character-trigram embedder.
#[derive(Debug, Clone)]
pub struct HashedFeatureEmbedder {
    dims: usize,
    name: String,
}

impl HashedFeatureEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedding dims must be positive");
        HashedFeatureEmbedder {
            dims,
            name: format!("builtin-hashed-{dims}"),
        }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let mut values = vec![0.0; self.dims];
        let mut add = |kind: u8, feature: &str| {
            let h = fnv1a(kind, feature);
            let bucket = (h % self.dims as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        };
        for word in tokens(text) {
            add(b'w', &word);
            let padded: Vec<char> = std::iter::once('#')
                .chain(word.chars())
                .chain(std::iter::once('#'))
                .collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                add(b'c', &s);
            }
        }
        EmbeddingVector::new(values)
            .normalize()
            .map_err(|_| Error::EmptyText)
    }
}

impl Default for HashedFeatureEmbedder {
    fn default() -> Self {
        HashedFeatureEmbedder::new(DEFAULT_DIMS)
    }
}

impl EmbeddingProvider for HashedFeatureEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct RemoteResponse {
    dims: usize,
    vectors: Vec<Vec<f64>>,
}

/// Embedding provider backed by an HTTP endpoint.
///
/// Request: `POST {"texts": [...]}`. Response: `{"dims": n, "vectors": [[...], ...]}`
/// in request order.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    name: String,
    dims: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dims: usize) -> Self {
        let url = url.into();
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(10))
            .build();
        RemoteEmbedder {
            name: format!("remote:{url}"),
            url,
            dims,
            agent,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let response = self
            .agent
            .post(&self.url)
            .send_json(RemoteRequest { texts })
            .map_err(|e| match e {
                ureq::Error::Status(code, _) if (400..500).contains(&code) => {
                    Error::ProviderMalformed(format!("provider rejected request with status {code}"))
                }
                other => Error::ProviderUnavailable(other.to_string()),
            })?;
        let body: RemoteResponse = response
            .into_json()
            .map_err(|e| Error::ProviderMalformed(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(Error::ProviderMalformed(format!(
                "asked for {} vectors, received {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        if body.dims != self.dims {
            return Err(Error::ProviderMalformed(format!(
                "expected {} dims, provider reports {}",
                self.dims, body.dims
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dims || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::ProviderMalformed("vector has wrong length or non-finite values".into()));
                }
                EmbeddingVector::new(v).normalize()
            })
            .collect()
    }
}

/// Cached embeddings for a corpus, aligned with the corpus object order.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    provider: String,
    dims: usize,
    vectors: Vec<EmbeddingVector>,
    ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    id: String,
    provider: String,
    vector: Vec<f64>,
}

const EMBED_BATCH: usize = 64;

impl EmbeddingIndex {
    /// Embeds every object phrase in `corpus`.
    pub fn build(provider: &dyn EmbeddingProvider, corpus: &ReferenceCorpus) -> Result<Self> {
        let mut vectors = Vec::with_capacity(corpus.len());
        for chunk in corpus.objects().chunks(EMBED_BATCH) {
            let texts: Vec<&str> = chunk.iter().map(|o| o.phrase.as_str()).collect();
            vectors.extend(provider.embed_batch(&texts)?);
        }
        Ok(EmbeddingIndex {
            provider: provider.name().to_string(),
            dims: provider.dims(),
            vectors,
            ids: corpus.objects().iter().map(|o| o.id.clone()).collect(),
        })
    }

    pub fn provider(&self) -> &str {
        &self.provider
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vector for the object at position `i` of the corpus.
    pub fn vector_at(&self, i: usize) -> &EmbeddingVector {
        &self.vectors[i]
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        if let Ok(i) = self.ids.binary_search_by(|x| x.as_str().cmp(id)) {
            return Some(&self.vectors[i]);
        }
        self.ids.iter().position(|x| x == id).map(|i| &self.vectors[i])
    }

    fn check_aligned(&self, corpus: &ReferenceCorpus) -> Result<()> {
        let aligned = self.ids.len() == corpus.len()
            && self.ids.iter().zip(corpus.objects()).all(|(id, o)| *id == o.id);
        if aligned {
            Ok(())
        } else {
            Err(Error::InvalidArgument("embedding index does not match corpus".into()))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let line = CacheLine {
                id: id.clone(),
                provider: self.provider.clone(),
                vector: v.values.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads cached vectors for `corpus`. Objects missing from the cache are
    /// embedded with `provider`; cache lines from another provider are ignored.
    pub fn load_or_build(
        path: &Path,
        provider: &dyn EmbeddingProvider,
        corpus: &ReferenceCorpus,
    ) -> Result<Self> {
        let mut cached: HashMap<String, Vec<f64>> = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if rec.provider == provider.name() && rec.vector.len() == provider.dims() {
                    cached.insert(rec.id, rec.vector);
                }
            }
        }
        let mut vectors = Vec::with_capacity(corpus.len());
        let missing: Vec<&ReferenceObject> =
            corpus.objects().iter().filter(|o| !cached.contains_key(&o.id)).collect();
        let mut fresh: HashMap<&str, EmbeddingVector> = HashMap::new();
        for chunk in missing.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = chunk.iter().map(|o| o.phrase.as_str()).collect();
            for (o, v) in chunk.iter().zip(provider.embed_batch(&texts)?) {
                fresh.insert(o.id.as_str(), v);
            }
        }
        for o in corpus.objects() {
            let v = match cached.remove(&o.id) {
                Some(values) => EmbeddingVector::new(values).normalize()?,
                None => fresh.remove(o.id.as_str()).expect("embedded above"),
            };
            vectors.push(v);
        }
        Ok(EmbeddingIndex {
            provider: provider.name().to_string(),
            dims: provider.dims(),
            vectors,
            ids: corpus.objects().iter().map(|o| o.id.clone()).collect(),
        })
    }
}

/// The `k` objects most similar to `query`: descending similarity, ties by id.
pub fn top_k_similar<'c>(
    query: &EmbeddingVector,
    query_provider: &str,
    corpus: &'c ReferenceCorpus,
    index: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<(&'c ReferenceObject, f64)>> {
    if query_provider != index.provider {
        return Err(Error::ProviderMismatch {
            expected: index.provider.clone(),
            found: query_provider.to_string(),
        });
    }
    index.check_aligned(corpus)?;
    let mut scored = corpus
        .objects()
        .iter()
        .zip(&index.vectors)
        .map(|(o, v)| cosine_similarity(query, v).map(|s| (o, s)))
        .collect::<Result<Vec<_>>>()?;
    let cmp = |a: &(&ReferenceObject, f64), b: &(&ReferenceObject, f64)| {
        b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id))
    };
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored)
}
