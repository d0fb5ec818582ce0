//! End-to-end runs: data preparation, training, evaluation and the OCAM
//! ablation sweep, with JSON reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::Value;

use crate::config::{LossOverrides, RunConfig};
use crate::corpus::{load_dataset, synth_clusters, train_test_split, Dataset};
use crate::embedder::{train, Checkpoint, ModelParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::exec::map_range;
use crate::index::{build_index, Space};
use crate::losses::LossKind;

/// Run-dependent facts. Everything outside this block is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub wall_clock_seconds: f64,
    pub unix_time_seconds: u64,
    pub threads: usize,
    pub out_dir: String,
}

impl RunMetadata {
    fn since(start: Instant, cfg: &RunConfig) -> Self {
        RunMetadata {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            unix_time_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            threads: cfg.threads,
            out_dir: cfg.out_dir.display().to_string(),
        }
    }
}

/// Envelope shared by every report: the command, the resolved config and its
/// hash, the command-specific body, then metadata. Output location and thread
/// count live in the metadata.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T> {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: IndexMap<String, String>,
    #[serde(flatten)]
    pub body: T,
    pub metadata: RunMetadata,
}

impl<T: Serialize> Report<T> {
    fn new(command: &str, cfg: &RunConfig, body: T, start: Instant) -> Self {
        Report {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.result_entries(),
            body,
            metadata: RunMetadata::since(start, cfg),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Drops every `metadata` member, at any depth.
pub fn without_metadata(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| k.as_str() != "metadata")
                .map(|(k, v)| (k.clone(), without_metadata(v)))
                .collect(),
        ),
        Value::Array(xs) => Value::Array(xs.iter().map(without_metadata).collect()),
        other => other.clone(),
    }
}

/// Loads the configured CSV or generates the synthetic corpus.
pub fn prepare_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => load_dataset(path),
        None => synth_clusters(&cfg.synth_spec()),
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub model: ModelParams,
    pub history: Vec<f64>,
}

impl FitOutcome {
    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            config_hash: cfg.hash(),
        }
    }
}

/// Validates, prepares and splits the data, then trains.
pub fn fit(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let ds = prepare_data(cfg)?;
    let (train_ds, test_ds) = train_test_split(&ds, &cfg.split_spec())?;
    log::info!(
        "training {} on {} items ({} held out)",
        cfg.loss,
        train_ds.len(),
        test_ds.len()
    );
    let outcome = train(&train_ds, &cfg.model_config(ds.dim()), &cfg.train_config())?;
    Ok(FitOutcome {
        train: train_ds,
        test: test_ds,
        model: outcome.model,
        history: outcome.history,
    })
}

fn window_mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    pub first_100_mean: Option<f64>,
    pub last_100_mean: Option<f64>,
    pub history: Vec<f64>,
}

impl LossSummary {
    pub fn new(history: &[f64]) -> Self {
        let k = history.len().min(100);
        LossSummary {
            first_100_mean: window_mean(&history[..k]),
            last_100_mean: window_mean(&history[history.len() - k..]),
            history: history.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainBody {
    pub num_train: usize,
    pub num_test: usize,
    pub loss: LossSummary,
    pub evaluation: EvalReport,
}

/// Trains and evaluates on the held-out split.
pub fn run_train(cfg: &RunConfig) -> Result<(FitOutcome, Report<TrainBody>)> {
    let start = Instant::now();
    let fit = fit(cfg)?;
    let mut evaluation = evaluate(&fit.test, &fit.model, &cfg.eval_options())?;
    evaluation.config_hash = Some(cfg.hash());
    let body = TrainBody {
        num_train: fit.train.len(),
        num_test: fit.test.len(),
        loss: LossSummary::new(&fit.history),
        evaluation,
    };
    let report = Report::new("train", cfg, body, start);
    Ok((fit, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateBody {
    pub checkpoint_config_hash: String,
    pub evaluation: EvalReport,
}

/// Evaluates a stored model on `test`.
pub fn run_evaluate(cfg: &RunConfig, ck: &Checkpoint, test: &Dataset) -> Result<Report<EvaluateBody>> {
    let start = Instant::now();
    cfg.eval_options().validate()?;
    let mut evaluation = evaluate(test, &ck.model, &cfg.eval_options())?;
    evaluation.config_hash = Some(ck.config_hash.clone());
    let body = EvaluateBody {
        checkpoint_config_hash: ck.config_hash.clone(),
        evaluation,
    };
    Ok(Report::new("evaluate", cfg, body, start))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryHit {
    pub rank: usize,
    pub id: u64,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryBody {
    pub checkpoint_config_hash: String,
    pub space: Space,
    pub z: usize,
    /// Id of the corpus row used as the query; it is excluded from the hits.
    pub query_id: Option<u64>,
    pub hits: Vec<QueryHit>,
}

/// What to search for: a corpus row (excluded from its own results) or a raw
/// feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    Row(usize),
    Vector(Vec<f64>),
}

/// Embeds `corpus` with the stored model and ranks it against one query.
pub fn run_query(
    cfg: &RunConfig,
    ck: &Checkpoint,
    corpus: &Dataset,
    source: &QuerySource,
    space: Space,
    z: usize,
) -> Result<Report<QueryBody>> {
    let start = Instant::now();
    if z == 0 {
        return Err(Error::usage("z must be positive"));
    }
    let (features, query_id) = match source {
        QuerySource::Row(r) if *r < corpus.len() => (corpus.feature(*r).to_vec(), Some(corpus.ids()[*r])),
        QuerySource::Row(r) => {
            return Err(Error::usage(format!("query row {r} is outside the corpus of {} rows", corpus.len())))
        }
        QuerySource::Vector(v) => (v.clone(), None),
    };
    let embeddings = ck.model.embed_all(corpus.features(), cfg.execution())?;
    let query = ck.model.embed(&features)?;
    let index = build_index(embeddings, corpus.labels().to_vec(), corpus.ids().to_vec())?;
    let result = index.query_topz(&query, z, space, query_id)?;
    let hits = result
        .hits
        .iter()
        .enumerate()
        .map(|(rank, h)| QueryHit {
            rank: rank + 1,
            id: h.id,
            label: corpus.class_names()[index.labels()[h.position]].clone(),
            distance: h.distance,
        })
        .collect();
    let body = QueryBody {
        checkpoint_config_hash: ck.config_hash.clone(),
        space,
        z,
        query_id,
        hits,
    };
    Ok(Report::new("query", cfg, body, start))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRowKind {
    Ocam,
    NoPn,
    FixedMargin,
    Both,
}

impl AblationRowKind {
    pub const ALL: [AblationRowKind; 4] = [
        AblationRowKind::Ocam,
        AblationRowKind::NoPn,
        AblationRowKind::FixedMargin,
        AblationRowKind::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRowKind::Ocam => "ocam",
            AblationRowKind::NoPn => "no_pn",
            AblationRowKind::FixedMargin => "fixed_margin",
            AblationRowKind::Both => "both",
        }
    }

    /// The single-run configuration for this row: `base` with the loss swapped.
    /// "both" removes both OCAM components, which is the plain triplet loss.
    pub fn config(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let (kind, alpha) = match self {
            AblationRowKind::Ocam => (LossKind::Ocam, None),
            AblationRowKind::NoPn => (LossKind::OcamNoPn, None),
            AblationRowKind::FixedMargin => (LossKind::OcamFixedMargin, Some(base.ablate_alpha)),
            AblationRowKind::Both => (LossKind::Triplet, Some(base.ablate_alpha)),
        };
        cfg.loss = kind;
        cfg.loss_overrides = LossOverrides {
            alpha,
            ..LossOverrides::default()
        };
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: AblationRowKind,
    pub loss: LossKind,
    pub config_hash: String,
    pub final_loss_mean: Option<f64>,
    pub evaluation: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationBody {
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates OCAM and its three ablations on one data split.
pub fn run_ablation(cfg: &RunConfig) -> Result<Report<AblationBody>> {
    let start = Instant::now();
    cfg.validate()?;
    let runs = map_range(AblationRowKind::ALL.len(), cfg.execution(), |i| {
        let variant = AblationRowKind::ALL[i];
        let row_cfg = variant.config(cfg);
        let (_, report) = run_train(&row_cfg)?;
        Ok(AblationRow {
            variant,
            loss: row_cfg.loss,
            config_hash: row_cfg.hash(),
            final_loss_mean: report.body.loss.last_100_mean,
            evaluation: report.body.evaluation,
        })
    });
    let rows = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Report::new("ablate", cfg, AblationBody { rows }, start))
}

/// Aligned plain-text table: one line per variant and space, P@Z and mAP@Z
/// columns.
pub fn ablation_table(body: &AblationBody, cfg: &RunConfig) -> String {
    let mut header = vec!["variant".to_string(), "loss".to_string(), "space".to_string()];
    for z in &cfg.eval_z {
        header.push(format!("P@{z}"));
        header.push(format!("mAP@{z}"));
    }
    let mut lines = vec![header];
    for row in &body.rows {
        for &space in &cfg.eval_spaces {
            let mut cells = vec![row.variant.name().to_string(), row.loss.name().to_string(), space.name().to_string()];
            for &z in &cfg.eval_z {
                let m = row.evaluation.block(space, z).map(|b| &b.macro_avg);
                let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
                cells.push(fmt(m.and_then(|m| m.p_at_z)));
                cells.push(fmt(m.and_then(|m| m.map)));
            }
            lines.push(cells);
        }
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, line) in lines.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c < 3 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if n == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}
