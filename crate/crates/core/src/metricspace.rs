//! Distances between embeddings and conversion to binary hash codes.
//!
//! Continuous embeddings are plain `f64` slices. [`HashCode`] stores the
//! sign pattern of an embedding packed into `u64` words (bit set = `+1`), so
//! Hamming distance is a XOR plus population count per word.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense embedding vector produced by the embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::usage("embedding must have at least one entry"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("embedding entry {i} is not finite")));
        }
        Ok(Embedding(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Sign-binarized embedding, one bit per coordinate.
///
/// Padding bits past `len` in the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    len: usize,
    words: Vec<u64>,
}

impl HashCode {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Builds a code from explicit `±1` entries.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let mut words = vec![0u64; signs.len().div_ceil(64)];
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => words[i / 64] |= 1 << (i % 64),
                -1 => {}
                other => {
                    return Err(Error::usage(format!(
                        "hash code entry {i} is {other}, expected -1 or +1"
                    )))
                }
            }
        }
        Ok(HashCode {
            len: signs.len(),
            words,
        })
    }

    /// Rebuilds a code from packed words, rejecting stray padding bits.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(Error::Format(format!(
                "{} words cannot hold a code of length {len}",
                words.len()
            )));
        }
        if !len.is_multiple_of(64) {
            let last = *words.last().expect("nonempty when len % 64 != 0");
            if last >> (len % 64) != 0 {
                return Err(Error::Format("nonzero padding bits in hash code".into()));
            }
        }
        Ok(HashCode { len, words })
    }

    pub fn sign(&self, i: usize) -> i8 {
        assert!(i < self.len, "index {i} out of range for code of length {}", self.len);
        if self.words[i / 64] >> (i % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    /// The code as a `±1.0` real vector.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|i| f64::from(self.sign(i))).collect()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::usage(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// `(1 - cos(u, v)) / 2`, clamped to `[0, 1]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_lengths(u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine distance of a zero-norm vector"));
    }
    let cos = dot(u, v) / (nu * nv);
    Ok(((1.0 - cos) / 2.0).clamp(0.0, 1.0))
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_lengths(u.len(), v.len())?;
    Ok(squared_euclidean(u, v).sqrt())
}

pub fn squared_euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_lengths(u.len(), v.len())?;
    Ok(squared_euclidean(u, v))
}

pub(crate) fn squared_euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Sign binarization: `+1` where `e[i] >= 0`, `-1` otherwise.
pub fn binarize(e: &[f64]) -> HashCode {
    let mut words = vec![0u64; e.len().div_ceil(64)];
    for (i, &x) in e.iter().enumerate() {
        if x >= 0.0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    HashCode {
        len: e.len(),
        words,
    }
}

/// Number of differing positions, via XOR and popcount over packed words.
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    check_lengths(a.len, b.len)?;
    Ok(hamming_words(&a.words, &b.words))
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Position-by-position count over unpacked `±1` entries.
pub fn hamming_distance_naive(a: &[i8], b: &[i8]) -> Result<u32> {
    check_lengths(a.len(), b.len())?;
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as u32)
}
