//! Leave-one-query-out retrieval evaluation: precision at Z and mean average
//! precision, per class and macro-averaged, for each retrieval space.

use std::str::FromStr;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::embedder::ModelParams;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::index::{build_index, Space};

/// How the average precision of one ranked list is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Mean of the precision at each relevant rank, truncated at Z.
    Standard,
    /// `(sum_z t_z / z) / Z`. Bounded by `H_Z / Z`, so far below 1 for large Z.
    AsWritten,
}

impl MapMode {
    pub fn name(self) -> &'static str {
        match self {
            MapMode::Standard => "standard",
            MapMode::AsWritten => "as_written",
        }
    }
}

impl FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(MapMode::Standard),
            "as_written" => Ok(MapMode::AsWritten),
            _ => Err(Error::usage(format!("unknown mAP mode '{s}'"))),
        }
    }
}

/// Fraction of relevant items in a ranked list.
pub fn precision_at_z(relevance: &[bool]) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::usage("relevance vector is empty"));
    }
    Ok(relevance.iter().filter(|&&t| t).count() as f64 / relevance.len() as f64)
}

pub fn average_precision(relevance: &[bool], mode: MapMode) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::usage("relevance vector is empty"));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &t) in relevance.iter().enumerate() {
        if !t {
            continue;
        }
        hits += 1;
        let rank = (k + 1) as f64;
        acc += match mode {
            MapMode::Standard => hits as f64 / rank,
            MapMode::AsWritten => 1.0 / rank,
        };
    }
    Ok(match mode {
        MapMode::Standard => acc / hits.max(1) as f64,
        MapMode::AsWritten => acc / relevance.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub zs: Vec<usize>,
    pub spaces: Vec<Space>,
    /// Which mode fills the headline `map` fields. Both are always reported.
    pub map_mode: MapMode,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            zs: vec![5, 20, 50],
            spaces: vec![Space::Euclidean, Space::Hamming],
            map_mode: MapMode::Standard,
            exec: Execution::Parallel,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.zs.is_empty() || self.zs.contains(&0) {
            return Err(Error::usage("Z values must be a nonempty list of positive integers"));
        }
        if self.spaces.is_empty() {
            return Err(Error::usage("at least one retrieval space is required"));
        }
        let mut zs = self.zs.clone();
        zs.sort_unstable();
        zs.dedup();
        let mut sp: Vec<&str> = self.spaces.iter().map(|s| s.name()).collect();
        sp.sort_unstable();
        sp.dedup();
        if zs.len() != self.zs.len() || sp.len() != self.spaces.len() {
            return Err(Error::usage("duplicate Z value or retrieval space"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    pub n: usize,
    pub p_at_z: f64,
    pub map: f64,
    pub map_standard: f64,
    pub map_as_written: f64,
    /// Classes with a single sample cannot be queried meaningfully.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub p_at_z: Option<f64>,
    pub map: Option<f64>,
    pub map_standard: Option<f64>,
    pub map_as_written: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub per_class: Vec<ClassMetrics>,
    /// Queries that had fewer than Z candidates and were normalized by the
    /// actual count.
    pub short_queries: usize,
}

/// Run-dependent facts excluded from reproducibility comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_items: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub map_mode: MapMode,
    pub config_hash: Option<String>,
    /// space name -> Z -> metrics
    pub spaces: IndexMap<String, IndexMap<String, MetricBlock>>,
    pub warnings: Vec<String>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn block(&self, space: Space, z: usize) -> Option<&MetricBlock> {
        self.spaces.get(space.name())?.get(&z.to_string())
    }
}

#[derive(Clone, Copy, Default)]
struct QueryScores {
    p: f64,
    ap_standard: f64,
    ap_as_written: f64,
}

/// Embeds the test set with `model` and evaluates it.
pub fn evaluate(test: &Dataset, model: &ModelParams, opts: &EvalOptions) -> Result<EvalReport> {
    let start = Instant::now();
    let embeddings = model.embed_all(test.features(), opts.exec)?;
    let mut report = evaluate_embeddings(embeddings, test.labels(), test.ids(), test.class_names(), opts)?;
    report.metadata.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Evaluates precomputed embeddings: every item queries all others.
pub fn evaluate_embeddings(
    embeddings: Vec<Vec<f64>>,
    labels: &[usize],
    ids: &[u64],
    class_names: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    opts.validate()?;
    let start = Instant::now();
    let m = embeddings.len();
    let j = class_names.len();
    if labels.iter().any(|&l| l >= j) {
        return Err(Error::usage("label outside the declared classes"));
    }
    let ix = build_index(embeddings, labels.to_vec(), ids.to_vec())?;
    let mut counts = vec![0usize; j];
    for &l in labels {
        counts[l] += 1;
    }
    let mut warnings = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n < 2 {
            let msg = format!(
                "class '{}' has {n} sample(s); it is reported but excluded from macro averages",
                class_names[c]
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    if opts.map_mode == MapMode::AsWritten {
        warnings.push("headline mAP uses the as-written mode, bounded by H_Z/Z".into());
    }
    let z_max = *opts.zs.iter().max().expect("validated nonempty");

    let mut spaces = IndexMap::new();
    for &space in &opts.spaces {
        // per query: scores for each Z, plus whether it ran short
        let per_query: Vec<Result<Vec<(QueryScores, bool)>>> = map_range(m, opts.exec, |q| {
            let res = ix.query_topz(ix.embedding(q), z_max, space, Some(ix.ids()[q]))?;
            let rel: Vec<bool> = res.hits.iter().map(|h| labels[h.position] == labels[q]).collect();
            opts.zs
                .iter()
                .map(|&z| {
                    let prefix = &rel[..z.min(rel.len())];
                    if prefix.is_empty() {
                        return Ok((QueryScores::default(), true));
                    }
                    Ok((
                        QueryScores {
                            p: precision_at_z(prefix)?,
                            ap_standard: average_precision(prefix, MapMode::Standard)?,
                            ap_as_written: average_precision(prefix, MapMode::AsWritten)?,
                        },
                        prefix.len() < z,
                    ))
                })
                .collect()
        });
        let per_query: Vec<Vec<(QueryScores, bool)>> = per_query.into_iter().collect::<Result<_>>()?;

        let mut by_z = IndexMap::new();
        for (zi, &z) in opts.zs.iter().enumerate() {
            let mut sums = vec![QueryScores::default(); j];
            let mut short = 0;
            for (q, scores) in per_query.iter().enumerate() {
                let (s, is_short) = scores[zi];
                let acc = &mut sums[labels[q]];
                acc.p += s.p;
                acc.ap_standard += s.ap_standard;
                acc.ap_as_written += s.ap_as_written;
                short += usize::from(is_short);
            }
            let per_class: Vec<ClassMetrics> = (0..j)
                .map(|c| {
                    let n = counts[c].max(1) as f64;
                    let (ms, mw) = (sums[c].ap_standard / n, sums[c].ap_as_written / n);
                    ClassMetrics {
                        class: c,
                        name: class_names[c].clone(),
                        n: counts[c],
                        p_at_z: sums[c].p / n,
                        map: if opts.map_mode == MapMode::Standard { ms } else { mw },
                        map_standard: ms,
                        map_as_written: mw,
                        excluded: counts[c] < 2,
                    }
                })
                .collect();
            let included: Vec<&ClassMetrics> = per_class.iter().filter(|c| !c.excluded).collect();
            let mean = |f: fn(&ClassMetrics) -> f64| {
                (!included.is_empty())
                    .then(|| included.iter().map(|c| f(c)).sum::<f64>() / included.len() as f64)
            };
            let macro_avg = MacroMetrics {
                p_at_z: mean(|c| c.p_at_z),
                map: mean(|c| c.map),
                map_standard: mean(|c| c.map_standard),
                map_as_written: mean(|c| c.map_as_written),
            };
            by_z.insert(
                z.to_string(),
                MetricBlock {
                    macro_avg,
                    per_class,
                    short_queries: short,
                },
            );
        }
        spaces.insert(space.name().to_string(), by_z);
    }

    Ok(EvalReport {
        num_items: m,
        num_classes: j,
        class_counts: counts,
        map_mode: opts.map_mode,
        config_hash: None,
        spaces,
        warnings,
        metadata: ReportMetadata {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    })
}
