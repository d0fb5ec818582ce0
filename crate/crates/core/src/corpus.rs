//! Labeled feature-vector datasets: CSV ingestion, synthetic clusters and
//! train/test splitting.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYNTH_STREAM: u64 = 0x5359;
const SPLIT_STREAM: u64 = 0x5350;

/// A labeled corpus of `K` feature vectors of dimension `d` over `J` classes.
///
/// Labels are dense in `0..J`; `class_names[j]` records the original label
/// string for class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    ids: Vec<u64>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        ids: Vec<u64>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let k = features.len();
        if k == 0 {
            return Err(Error::usage("dataset has no samples"));
        }
        if labels.len() != k || ids.len() != k {
            return Err(Error::usage(format!(
                "dataset columns disagree: {k} features, {} labels, {} ids",
                labels.len(),
                ids.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::usage("feature dimension must be positive"));
        }
        if let Some(i) = features.iter().position(|f| f.len() != dim) {
            return Err(Error::usage(format!("sample {i} has dimension {}, expected {dim}", features[i].len())));
        }
        if let Some(i) = features.iter().position(|f| f.iter().any(|x| !x.is_finite())) {
            return Err(Error::domain(format!("sample {i} has non-finite features")));
        }
        let j = class_names.len();
        let mut counts = vec![0usize; j];
        for &l in &labels {
            if l >= j {
                return Err(Error::usage(format!("label {l} out of range for {j} classes")));
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::usage(format!("class {c} ('{}') has no samples", class_names[c])));
        }
        let mut seen = std::collections::HashSet::with_capacity(k);
        if let Some(id) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::usage(format!("duplicate sample id {id}")));
        }
        Ok(Dataset {
            dim,
            features,
            labels,
            ids,
            class_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Sample indices grouped by class.
    pub fn members_by_class(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    /// The samples at `indices` (kept in the given order). Classes absent from
    /// the subset are dropped and the remaining labels re-densified in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut present = vec![false; self.num_classes()];
        for &i in indices {
            present[self.labels[i]] = true;
        }
        let mut remap = vec![usize::MAX; self.num_classes()];
        let mut names = Vec::new();
        for (c, &p) in present.iter().enumerate() {
            if p {
                remap[c] = names.len();
                names.push(self.class_names[c].clone());
            }
        }
        Dataset::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| remap[self.labels[i]]).collect(),
            indices.iter().map(|&i| self.ids[i]).collect(),
            names,
        )
    }
}

// ---------------------------------------------------------------------------
// CSV

/// Parses `label,f0,...,f{d-1}` CSV. Row numbers in errors are 1-based file
/// lines (the header is row 1). Labels become dense class ids in order of
/// first appearance; ids are the data-row order.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::Parse { row: 1, msg: "empty file".into() }),
        Some(h) => h.map_err(|e| csv_error(e, 1))?,
    };
    if header.get(0).map(str::trim) != Some("label") {
        return Err(Error::Parse {
            row: 1,
            msg: "header must start with 'label'".into(),
        });
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::Parse { row: 1, msg: "header declares no feature columns".into() });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(Error::Parse {
                row: 1,
                msg: format!("column {} is '{name}', expected 'f{i}'", i + 1),
            });
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_of: HashMap<String, usize> = HashMap::new();
    for (n, rec) in records.enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| csv_error(e, row))?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(Error::Parse {
                row,
                msg: format!("{} fields, expected {}", rec.len(), dim + 1),
            });
        }
        let name = rec[0].trim().to_string();
        if name.is_empty() {
            return Err(Error::Parse { row, msg: "empty label".into() });
        }
        let next = class_names.len();
        let label = *class_of.entry(name.clone()).or_insert_with(|| {
            class_names.push(name);
            next
        });
        let mut f = Vec::with_capacity(dim);
        for (col, field) in rec.iter().skip(1).enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                msg: format!("f{col} = '{field}' is not a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse { row, msg: format!("f{col} is not finite") });
            }
            f.push(x);
        }
        features.push(f);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Parse { row: 2, msg: "no data rows".into() });
    }
    let ids = (0..features.len() as u64).collect();
    Dataset::new(features, labels, ids, class_names)
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    Error::Parse { row, msg: e.to_string() }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::usage(format!("cannot open dataset {}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes the CSV form. Floats use the shortest round-trip representation, so
/// reading the output back reproduces the features bit for bit.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    write!(w, "label")?;
    for i in 0..ds.dim {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for (f, &l) in ds.features.iter().zip(&ds.labels) {
        write!(w, "{}", ds.class_names[l])?;
        for x in f {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_csv(ds, std::fs::File::create(path)?)
}

// ---------------------------------------------------------------------------
// synthetic data

/// Parameters of [`synth_clusters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Offset of each class center from the origin, in units of `sigma`.
    pub spacing: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Center of class `j`: `spacing * sigma` along axis `j mod d`. Class indices
/// past `d` reuse the axes with alternating sign; every further pair of
/// cycles pushes the centers one more `spacing` out so no two coincide.
pub fn class_center(j: usize, dim: usize, spacing: f64, sigma: f64) -> Vec<f64> {
    let cycle = j / dim;
    let sign = if cycle.is_multiple_of(2) { 1.0 } else { -1.0 };
    let ring = (cycle / 2 + 1) as f64;
    let mut c = vec![0.0; dim];
    c[j % dim] = sign * ring * spacing * sigma;
    c
}

/// Isotropic Gaussian clusters around [`class_center`]s. Samples are emitted
/// class by class; labels are named `"0"`, `"1"`, ...
pub fn synth_clusters(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::usage("synthetic data needs at least 2 classes"));
    }
    if spec.per_class < 2 {
        return Err(Error::usage("synthetic data needs at least 2 samples per class"));
    }
    if spec.dim == 0 {
        return Err(Error::usage("synthetic feature dimension must be positive"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::usage(format!("sigma = {} must be finite and >= 0", spec.sigma)));
    }
    if !(spec.spacing >= 0.0 && spec.spacing.is_finite()) {
        return Err(Error::usage(format!("spacing = {} must be finite and >= 0", spec.spacing)));
    }
    if spec.dim < spec.classes {
        log::warn!(
            "synthetic data with {} classes in {} dimensions reuses axes",
            spec.classes,
            spec.dim
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SYNTH_STREAM);
    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut features = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for j in 0..spec.classes {
        let center = class_center(j, spec.dim, spec.spacing, spec.sigma);
        for _ in 0..spec.per_class {
            features.push(center.iter().map(|c| c + noise.sample(&mut rng)).collect());
            labels.push(j);
        }
    }
    let ids = (0..features.len() as u64).collect();
    let names = (0..spec.classes).map(|j| j.to_string()).collect();
    Dataset::new(features, labels, ids, names)
}

// ---------------------------------------------------------------------------
// splitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.85,
            stratified: true,
            seed: 0,
        }
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    // tolerance absorbs products such as 0.85 * 20 landing a hair under 17
    ((n as f64 * fraction) + 1e-9).floor() as usize
}

/// Splits into disjoint train and test sets. Stratified mode puts
/// `floor(n_j * fraction)` samples of each class into train and the rest into
/// test. Both outputs keep the original sample order.
pub fn train_test_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::usage(format!(
            "train fraction {} must lie strictly between 0 and 1",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SPLIT_STREAM);
    let mut in_train = vec![false; ds.len()];
    if spec.stratified {
        for (c, mut members) in ds.members_by_class().into_iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::usage(format!(
                    "class '{}' has a single sample and cannot be stratified",
                    ds.class_names[c]
                )));
            }
            members.shuffle(&mut rng);
            for &i in &members[..train_count(members.len(), spec.train_fraction)] {
                in_train[i] = true;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        for &i in &all[..train_count(ds.len(), spec.train_fraction)] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| !in_train[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::usage(format!(
            "split of {} samples at fraction {} leaves one side empty",
            ds.len(),
            spec.train_fraction
        )));
    }
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}
