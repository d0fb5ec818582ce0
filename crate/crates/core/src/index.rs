//! Exact top-Z retrieval over a fixed corpus of embeddings.
//!
//! Every query is a full linear scan. Results are ordered by distance with
//! ties broken by ascending item id, which makes rankings reproducible and
//! comparable against a brute-force sort.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::metricspace::{binarize, cosine_distance, hamming_words, squared_euclidean, HashCode};

/// Ranking space for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Euclidean distance between continuous embeddings.
    Euclidean,
    /// Hamming distance between sign codes.
    Hamming,
    /// Cosine distance between continuous embeddings (non-default).
    Cosine,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Euclidean => "euclidean",
            Space::Hamming => "hamming",
            Space::Cosine => "cosine",
        }
    }

    fn flag(self) -> u8 {
        match self {
            Space::Euclidean => 1,
            Space::Hamming => 2,
            Space::Cosine => 4,
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Space::Euclidean),
            "hamming" => Ok(Space::Hamming),
            "cosine" => Ok(Space::Cosine),
            _ => Err(Error::usage(format!("unknown retrieval space '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub distance: f64,
    /// Position of the item inside the index.
    #[serde(skip)]
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub space: Space,
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }
}

/// Immutable corpus of embeddings with their precomputed sign codes.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    /// Row-major `M x S`.
    embeddings: Vec<f64>,
    codes: Vec<HashCode>,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

fn by_distance_then_id(a: &Hit, b: &Hit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

/// Builds an index. Rejects empty corpora, ragged or non-finite embeddings,
/// column length mismatches and duplicate ids.
pub fn build_index(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, ids: Vec<u64>) -> Result<RetrievalIndex> {
    let m = embeddings.len();
    if m == 0 {
        return Err(Error::usage("cannot index an empty corpus"));
    }
    if labels.len() != m || ids.len() != m {
        return Err(Error::usage(format!(
            "index columns disagree: {m} embeddings, {} labels, {} ids",
            labels.len(),
            ids.len()
        )));
    }
    let dim = embeddings[0].len();
    if dim == 0 {
        return Err(Error::usage("embeddings must be nonempty"));
    }
    let mut seen = HashSet::with_capacity(m);
    if let Some(id) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(Error::usage(format!("duplicate item id {id}")));
    }
    let mut flat = Vec::with_capacity(m * dim);
    let mut codes = Vec::with_capacity(m);
    for (i, e) in embeddings.iter().enumerate() {
        if e.len() != dim {
            return Err(Error::usage(format!("embedding {i} has length {}, expected {dim}", e.len())));
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!("embedding {i} is not finite")));
        }
        flat.extend_from_slice(e);
        codes.push(binarize(e));
    }
    Ok(RetrievalIndex {
        dim,
        embeddings: flat,
        codes,
        labels,
        ids,
    })
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn code(&self, i: usize) -> &HashCode {
        &self.codes[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// The `z` nearest items to `query` in `space`, skipping `exclude_id`.
    /// Returns every candidate when fewer than `z` remain.
    pub fn query_topz(&self, query: &[f64], z: usize, space: Space, exclude_id: Option<u64>) -> Result<RetrievalResult> {
        if z == 0 {
            return Err(Error::usage("Z must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::usage(format!(
                "query has length {}, index stores length {}",
                query.len(),
                self.dim
            )));
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("query is not finite"));
        }
        let mut hits = Vec::with_capacity(self.len());
        let keep = |i: usize| exclude_id != Some(self.ids[i]);
        match space {
            Space::Euclidean => {
                for i in (0..self.len()).filter(|&i| keep(i)) {
                    let d = squared_euclidean(query, self.embedding(i)).sqrt();
                    hits.push(Hit { id: self.ids[i], distance: d, position: i });
                }
            }
            Space::Hamming => {
                let q = binarize(query);
                for i in (0..self.len()).filter(|&i| keep(i)) {
                    let d = hamming_words(q.words(), self.codes[i].words());
                    hits.push(Hit { id: self.ids[i], distance: f64::from(d), position: i });
                }
            }
            Space::Cosine => {
                for i in (0..self.len()).filter(|&i| keep(i)) {
                    let d = cosine_distance(query, self.embedding(i))?;
                    hits.push(Hit { id: self.ids[i], distance: d, position: i });
                }
            }
        }
        if z < hits.len() {
            hits.select_nth_unstable_by(z - 1, by_distance_then_id);
            hits.truncate(z);
        }
        hits.sort_unstable_by(by_distance_then_id);
        Ok(RetrievalResult { space, hits })
    }

    /// Leave-one-out queries: every stored item queries the rest of the index.
    pub fn query_all_stored(&self, z: usize, space: Space, exec: Execution) -> Result<Vec<RetrievalResult>> {
        map_range(self.len(), exec, |i| {
            self.query_topz(self.embedding(i), z, space, Some(self.ids[i]))
        })
        .into_iter()
        .collect()
    }
}

// ---------------------------------------------------------------------------
// snapshots

const SNAPSHOT_MAGIC: &[u8; 8] = b"OCAMIDX\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Layout (all little-endian): magic, `u32` version, `u64` M, `u64` S, `u8`
/// space flags, then `M*S` `f64` embeddings, `M*ceil(S/64)` `u64` code words,
/// `M` `u64` labels and `M` `u64` ids.
pub fn write_snapshot<W: Write>(ix: &RetrievalIndex, mut w: W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(ix.len() as u64).to_le_bytes())?;
    w.write_all(&(ix.dim as u64).to_le_bytes())?;
    let flags = Space::Euclidean.flag() | Space::Hamming.flag() | Space::Cosine.flag();
    w.write_all(&[flags])?;
    for x in &ix.embeddings {
        w.write_all(&x.to_le_bytes())?;
    }
    for c in &ix.codes {
        for word in c.words() {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    for &l in &ix.labels {
        w.write_all(&(l as u64).to_le_bytes())?;
    }
    for id in &ix.ids {
        w.write_all(&id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a snapshot and checks that every stored code matches its embedding.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<RetrievalIndex> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("not an index snapshot".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let m = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    if m == 0 || dim == 0 {
        return Err(Error::Format("snapshot declares an empty index".into()));
    }
    let mut embeddings = Vec::with_capacity(m * dim);
    for _ in 0..m * dim {
        embeddings.push(f64::from_bits(read_u64(&mut r)?));
    }
    let words = dim.div_ceil(64);
    let mut codes = Vec::with_capacity(m);
    for _ in 0..m {
        let ws = (0..words).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        codes.push(HashCode::from_words(dim, ws)?);
    }
    let labels = (0..m).map(|_| read_u64(&mut r).map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    let ids = (0..m).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = embeddings.chunks(dim).map(<[f64]>::to_vec).collect();
    let ix = build_index(rows, labels, ids)?;
    if ix.codes != codes {
        return Err(Error::Format("stored hash codes do not match the embeddings".into()));
    }
    Ok(ix)
}

pub fn save_snapshot(ix: &RetrievalIndex, path: &Path) -> Result<()> {
    write_snapshot(ix, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_snapshot(path: &Path) -> Result<RetrievalIndex> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::usage(format!("cannot open snapshot {}: {e}", path.display())))?;
    read_snapshot(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> RetrievalIndex {
        build_index(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            vec![0, 1, 0],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_ranking() {
        let r = three().query_topz(&[1.0, 0.0], 2, Space::Euclidean, None).unwrap();
        assert_eq!(r.ids(), vec![0, 1]);
        assert_eq!(r.hits[0].distance, 0.0);
        assert!((r.hits[1].distance - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn self_retrieval_and_exhaustive_ranking() {
        let ix = three();
        let r = ix.query_topz(&[0.0, 1.0], 1, Space::Euclidean, None).unwrap();
        assert_eq!((r.ids(), r.hits[0].distance), (vec![1], 0.0));
        let all = ix.query_topz(&[0.3, 0.2], 10, Space::Euclidean, None).unwrap();
        assert_eq!(all.hits.len(), 3);
        assert!(all.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn exclusion_and_ties() {
        let ix = three();
        let r = ix.query_topz(&[1.0, 0.0], 3, Space::Euclidean, Some(0)).unwrap();
        assert_eq!(r.ids(), vec![1, 2]);
        // codes: [+,+], [+,+], [-,+]; query [+,+] ties ids 0 and 1 at distance 0
        let h = ix.query_topz(&[0.5, 0.5], 3, Space::Hamming, None).unwrap();
        assert_eq!(h.ids(), vec![0, 1, 2]);
        assert_eq!(h.hits.iter().map(|x| x.distance).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn minimal_corpus_and_construction_errors() {
        let one = build_index(vec![vec![0.2, -0.1]], vec![0], vec![42]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.code(0), &binarize(&[0.2, -0.1]));
        assert!(build_index(vec![], vec![], vec![]).is_err());
        assert!(build_index(vec![vec![1.0], vec![2.0]], vec![0, 0], vec![5, 5]).is_err());
        assert!(build_index(vec![vec![1.0], vec![2.0, 1.0]], vec![0, 0], vec![0, 1]).is_err());
        assert!(build_index(vec![vec![1.0]], vec![0, 1], vec![0]).is_err());
        let ix = three();
        assert!(ix.query_topz(&[1.0], 1, Space::Euclidean, None).is_err());
        assert!(ix.query_topz(&[1.0, 0.0], 0, Space::Euclidean, None).is_err());
    }

    #[test]
    fn cosine_space_ranks_by_angle() {
        let ix = build_index(vec![vec![10.0, 0.0], vec![1.0, 1.0], vec![0.1, 0.0]], vec![0, 0, 0], vec![0, 1, 2]).unwrap();
        let r = ix.query_topz(&[1.0, 0.0], 3, Space::Cosine, None).unwrap();
        assert_eq!(r.ids(), vec![0, 2, 1]);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let ix = build_index(
            (0..7).map(|i| (0..70).map(|k| ((i * 70 + k) as f64).sin()).collect()).collect(),
            vec![0, 1, 2, 0, 1, 2, 0],
            vec![10, 11, 12, 13, 14, 15, 99],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_snapshot(&ix, &mut buf).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, ix);
        assert!(back.embeddings.iter().zip(&ix.embeddings).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut bad = buf.clone();
        bad[0] = 0;
        assert!(read_snapshot(bad.as_slice()).is_err());
        // flip one code bit
        let code_start = 8 + 4 + 8 + 8 + 1 + 7 * 70 * 8;
        bad = buf;
        bad[code_start] ^= 1;
        assert!(matches!(read_snapshot(bad.as_slice()), Err(Error::Format(_))));
    }
}
