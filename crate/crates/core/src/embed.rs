//! Guidance embeddings: storage, cosine similarity, pairwise blending, and
//! deterministic stand-in encoders for text and audio.
//!
//! Every stored vector has unit L2 norm. Blending averages two embeddings and
//! renormalizes; under a cosine objective the renormalization changes nothing.

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 512;

/// Width of the hashed bag-of-tokens feature used by [`stub_text_embedding`].
pub const TEXT_FEATURES: usize = 256;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate embedding id {0:?}")]
    Duplicate(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("degenerate blend of {0:?} and {1:?}: vectors cancel")]
    DegenerateBlend(String, String),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Blend,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Blend => "blend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub id: String,
    pub modality: Modality,
    pub vector: Vec<f64>,
    #[serde(default)]
    pub source: String,
}

impl PromptEmbedding {
    /// Normalizes `vector`, rejecting non-finite or zero input.
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        vector: Vec<f64>,
        source: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        let id = id.into();
        let vector = normalize(&vector).map_err(|reason| EmbedError::Invalid {
            id: id.clone(),
            reason,
        })?;
        Ok(Self {
            id,
            modality,
            vector,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>, String> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(format!("component {i} is not finite"));
    }
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Err("zero vector".into());
    }
    // already unit up to rounding: leave untouched so normalization is idempotent
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &PromptEmbedding, b: &PromptEmbedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::Dimension(a.dim(), b.dim()));
    }
    Ok(dot(&a.vector, &b.vector).clamp(-1.0, 1.0))
}

/// Mean of two embeddings, renormalized.
pub fn blend(a: &PromptEmbedding, b: &PromptEmbedding) -> Result<PromptEmbedding, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::Dimension(a.dim(), b.dim()));
    }
    let mean: Vec<f64> = a.vector.iter().zip(&b.vector).map(|(x, y)| (x + y) / 2.0).collect();
    let vector =
        normalize(&mean).map_err(|_| EmbedError::DegenerateBlend(a.id.clone(), b.id.clone()))?;
    Ok(PromptEmbedding {
        id: format!("blend({},{})", a.id, b.id),
        modality: Modality::Blend,
        vector,
        source: String::new(),
    })
}

/// Normalized weighted sum of several unit vectors.
pub fn weighted_sum(parts: &[(&[f64], f64)]) -> Result<Vec<f64>, String> {
    let dim = parts.first().map_or(0, |p| p.0.len());
    let mut acc = vec![0.0; dim];
    for (v, w) in parts {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += w * x;
        }
    }
    normalize(&acc)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    embeddings: Vec<PromptEmbedding>,
}

/// Embeddings keyed by id, all of one dimension, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: IndexMap<String, PromptEmbedding>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PromptEmbedding> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptEmbedding> {
        self.entries.values()
    }

    /// Normalizes and inserts; the id must be new and the dimension must match.
    pub fn insert(&mut self, mut e: PromptEmbedding) -> Result<(), EmbedError> {
        if e.dim() != self.dim {
            return Err(EmbedError::Invalid {
                reason: format!("dimension {} does not match store dimension {}", e.dim(), self.dim),
                id: e.id,
            });
        }
        if self.entries.contains_key(&e.id) {
            return Err(EmbedError::Duplicate(e.id));
        }
        e.vector = normalize(&e.vector).map_err(|reason| EmbedError::Invalid {
            id: e.id.clone(),
            reason,
        })?;
        self.entries.insert(e.id.clone(), e);
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, EmbedError> {
        let manifest: Manifest = serde_json::from_str(text)?;
        let mut store = Self::new(manifest.dim);
        for e in manifest.embeddings {
            store.insert(e)?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        let manifest = Manifest {
            dim: self.dim,
            embeddings: self.entries.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    }

    /// Checks the unit-norm and finiteness invariants of every entry.
    pub fn validate(&self) -> Vec<String> {
        self.entries
            .values()
            .filter_map(|e| {
                let norm = l2_norm(&e.vector);
                if e.vector.iter().any(|x| !x.is_finite()) || (norm - 1.0).abs() >= NORM_TOLERANCE {
                    Some(format!("embedding {:?} has norm {norm}", e.id))
                } else {
                    None
                }
            })
            .collect()
    }
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore, EmbedError> {
    EmbeddingStore::from_json(&std::fs::read_to_string(path)?)
}

// Stream ids keep text and audio projections independent for the same seed.
const TEXT_STREAM: u64 = 1;
const AUDIO_STREAM: u64 = 2;

/// `rows x cols` Gaussian matrix drawn row-major from a ChaCha8 stream.
pub fn projection(seed: u64, stream: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..rows)
        .map(|_| (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn project(matrix: &[Vec<f64>], features: &[f64]) -> Vec<f64> {
    matrix.iter().map(|row| dot(row, features)).collect()
}

fn bucket(bytes: &[u8]) -> (usize, f64) {
    let digest = Sha256::digest(bytes);
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
    ((word % TEXT_FEATURES as u64) as usize, sign)
}

/// Hashed bag of lowercase whitespace tokens plus one bucket for the whole
/// string, so even empty text has a non-zero feature.
pub fn text_features(text: &str) -> Vec<f64> {
    let mut f = vec![0.0; TEXT_FEATURES];
    let (i, s) = bucket(text.as_bytes());
    f[i] += s;
    for token in text.split_whitespace() {
        let (i, s) = bucket(token.to_lowercase().as_bytes());
        f[i] += s;
    }
    f
}

fn finish(id: String, modality: Modality, raw: Vec<f64>, source: String) -> PromptEmbedding {
    let mut vector = normalize(&raw).unwrap_or_else(|_| {
        let mut e1 = vec![0.0; raw.len()];
        e1[0] = 1.0;
        e1
    });
    if vector.is_empty() {
        vector.push(1.0);
    }
    PromptEmbedding {
        id,
        modality,
        vector,
        source,
    }
}

/// Deterministic text encoder stand-in: hashed token features through a
/// seeded Gaussian projection.
pub fn stub_text_embedding(text: &str, dim: usize, seed: u64) -> PromptEmbedding {
    let matrix = projection(seed, TEXT_STREAM, dim, TEXT_FEATURES);
    let raw = project(&matrix, &text_features(text));
    finish(
        format!("text:{text}"),
        Modality::Text,
        raw,
        format!("stub-text seed={seed}"),
    )
}

/// Deterministic audio encoder stand-in: per-band mean dB through a seeded
/// Gaussian projection.
pub fn stub_audio_embedding(band_means_db: &[f64], dim: usize, seed: u64) -> PromptEmbedding {
    let matrix = projection(seed, AUDIO_STREAM, dim, band_means_db.len());
    let raw = project(&matrix, band_means_db);
    finish(
        "audio".to_string(),
        Modality::Audio,
        raw,
        format!("stub-audio seed={seed}"),
    )
}
