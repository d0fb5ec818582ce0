//! Triplet, pair and point-wise losses with hand-derived gradients.
//!
//! Every triplet-style loss is written as a function of the three pairwise
//! distances `d(A,P)`, `d(A,N)` and `d(P,N)`. The value and the partial
//! derivatives with respect to those distances are computed together, then
//! chained through the distance gradients to the embeddings. Hinges use the
//! subgradient 0 at the kink.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metricspace::{cosine_distance, dot, norm};

/// Loss families supported by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ocam,
    OcamNoPn,
    OcamFixedMargin,
    Triplet,
    Contrastive,
    CrossEntropy,
    TriEp,
    Wabt,
    DmTri,
    CondTri,
    Ctll,
}

impl LossKind {
    pub const ALL: [LossKind; 11] = [
        LossKind::Ocam,
        LossKind::OcamNoPn,
        LossKind::OcamFixedMargin,
        LossKind::Triplet,
        LossKind::Contrastive,
        LossKind::CrossEntropy,
        LossKind::TriEp,
        LossKind::Wabt,
        LossKind::DmTri,
        LossKind::CondTri,
        LossKind::Ctll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ocam => "ocam",
            LossKind::OcamNoPn => "ocam_no_pn",
            LossKind::OcamFixedMargin => "ocam_fixed_margin",
            LossKind::Triplet => "triplet",
            LossKind::Contrastive => "contrastive",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::TriEp => "triep",
            LossKind::Wabt => "wabt",
            LossKind::DmTri => "dmtri",
            LossKind::CondTri => "condtri",
            LossKind::Ctll => "ctll",
        }
    }

    /// Losses evaluated on independent (anchor, positive, negative) triplets.
    pub fn is_triplet(self) -> bool {
        !matches!(
            self,
            LossKind::Contrastive | LossKind::CrossEntropy | LossKind::TriEp
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::usage(format!("unknown loss kind '{s}'")))
    }
}

/// Distance used inside the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::usage(format!("unknown metric '{s}'"))),
        }
    }
}

/// A loss kind plus every hyperparameter any kind may read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Margin. For `OcamFixedMargin` this is the fixed margin replacing the adaptive one.
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Anchor scale (WABT).
    pub r: f64,
    /// Regularization weight (CondTri).
    pub delta: f64,
    /// Regularization weight and bias (CTLL).
    pub kappa: f64,
    pub gamma: f64,
    pub metric: Metric,
}

impl LossSpec {
    /// Published hyperparameters for `kind`, with cosine distance.
    pub fn new(kind: LossKind) -> Self {
        let alpha = match kind {
            LossKind::TriEp => 0.3,
            LossKind::Wabt | LossKind::Ctll => 1.0,
            _ => 0.2,
        };
        LossSpec {
            kind,
            alpha,
            sigma1: 2.04,
            sigma2: 1.71,
            beta1: 0.83,
            beta2: 0.64,
            r: 3.0,
            delta: 0.1,
            kappa: 0.01,
            gamma: 0.01,
            metric: Metric::Cosine,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("alpha", self.alpha),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("r", self.r),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::usage(format!("loss.{name} = {v} is not finite")));
        }
        if self.alpha < 0.0 {
            return Err(Error::usage(format!("loss.alpha = {} must be >= 0", self.alpha)));
        }
        if self.r <= 0.0 {
            return Err(Error::usage(format!("loss.r = {} must be > 0", self.r)));
        }
        if self.delta < 0.0 {
            return Err(Error::usage(format!("loss.delta = {} must be >= 0", self.delta)));
        }
        if self.kappa < 0.0 {
            return Err(Error::usage(format!("loss.kappa = {} must be >= 0", self.kappa)));
        }
        Ok(())
    }
}

/// Anchor, positive and negative embeddings of one triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletInput<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
}

impl<'a> TripletInput<'a> {
    pub fn new(anchor: &'a [f64], positive: &'a [f64], negative: &'a [f64]) -> Result<Self> {
        let n = anchor.len();
        if positive.len() != n || negative.len() != n {
            return Err(Error::usage(format!(
                "triplet length mismatch: {n}, {}, {}",
                positive.len(),
                negative.len()
            )));
        }
        if [anchor, positive, negative]
            .iter()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::domain("triplet contains non-finite entries"));
        }
        Ok(TripletInput {
            anchor,
            positive,
            negative,
        })
    }
}

/// Partial derivatives of a triplet loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negative: Vec<f64>,
}

/// OCAM ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Drops the P-N term from the balanced average, keeps the adaptive margin.
    NoPn,
    /// Keeps the balanced average, replaces the adaptive margin with a constant.
    FixedMargin,
    /// Drops both; this is the traditional triplet loss.
    Both,
}

// ---------------------------------------------------------------------------
// distances with gradients

/// Value of `metric(u, v)` and its gradients with respect to `u` and `v`.
pub(crate) fn distance_with_grad(
    metric: Metric,
    u: &[f64],
    v: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::usage(format!("length mismatch: {} vs {}", u.len(), v.len())));
    }
    match metric {
        Metric::Cosine => {
            let (nu, nv) = (norm(u), norm(v));
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::domain("cosine distance of a zero-norm vector"));
            }
            let uv = dot(u, v);
            let inv = 1.0 / (nu * nv);
            let cos = uv * inv;
            let value = ((1.0 - cos) / 2.0).clamp(0.0, 1.0);
            // d cos / du = v/(|u||v|) - cos * u/|u|^2, and d f = -d cos / 2
            let du = u
                .iter()
                .zip(v)
                .map(|(a, b)| -0.5 * (b * inv - cos * a / (nu * nu)))
                .collect();
            let dv = u
                .iter()
                .zip(v)
                .map(|(a, b)| -0.5 * (a * inv - cos * b / (nv * nv)))
                .collect();
            Ok((value, du, dv))
        }
        Metric::Euclidean => {
            let (d, du) = l2_diff_with_grad(u, v);
            let dv = du.iter().map(|g| -g).collect();
            Ok((d, du, dv))
        }
    }
}

/// `||u - v||` and its gradient with respect to `u` (zero at `u == v`).
fn l2_diff_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    if d == 0.0 {
        return (0.0, vec![0.0; u.len()]);
    }
    (d, diff.into_iter().map(|x| x / d).collect())
}

fn distance(metric: Metric, u: &[f64], v: &[f64]) -> Result<f64> {
    match metric {
        Metric::Cosine => cosine_distance(u, v),
        Metric::Euclidean => crate::metricspace::euclidean_distance(u, v),
    }
}

fn axpy(acc: &mut [f64], scale: f64, g: &[f64]) {
    if scale == 0.0 {
        return;
    }
    for (a, x) in acc.iter_mut().zip(g) {
        *a += scale * x;
    }
}

// ---------------------------------------------------------------------------
// triplet family

/// Value and distance-partials `(d/d dap, d/d dan, d/d dpn)` of a triplet loss
/// expressed in terms of the three pairwise distances.
fn triplet_terms(spec: &LossSpec, dap: f64, dan: f64, dpn: f64) -> Result<(f64, [f64; 3])> {
    let hinge = |h: f64, partials: [f64; 3]| {
        if h > 0.0 {
            (h, partials)
        } else {
            (0.0, [0.0; 3])
        }
    };
    Ok(match spec.kind {
        LossKind::Ocam => hinge(dap - (dan + 2.0 * dpn - 1.0) / 2.0, [1.0, -0.5, -1.0]),
        LossKind::OcamNoPn => hinge(dap - dan + (1.0 - dpn) / 2.0, [1.0, -1.0, -0.5]),
        LossKind::OcamFixedMargin => {
            hinge(dap - (dan + dpn) / 2.0 + spec.alpha, [1.0, -0.5, -0.5])
        }
        LossKind::Triplet | LossKind::Wabt | LossKind::Ctll => {
            hinge(dap - dan + spec.alpha, [1.0, -1.0, 0.0])
        }
        LossKind::CondTri => {
            let (v, p) = hinge(dap - dan + spec.alpha, [1.0, -1.0, 0.0]);
            let half = spec.delta / 2.0;
            (v + half * (dap + dan), [p[0] + half, p[1] + half, 0.0])
        }
        LossKind::DmTri => {
            let denom = dap + spec.alpha;
            if denom <= 0.0 {
                return Err(Error::domain(
                    "dmTri denominator d(A,P) + alpha is zero; use alpha > 0",
                ));
            }
            let h = 1.0 - dan / denom;
            hinge(h, [dan / (denom * denom), -1.0 / denom, 0.0])
        }
        k => return Err(Error::usage(format!("{k} is not a triplet loss"))),
    })
}

fn uses_pn(kind: LossKind) -> bool {
    matches!(
        kind,
        LossKind::Ocam | LossKind::OcamNoPn | LossKind::OcamFixedMargin
    )
}

/// Value and gradient of a single-triplet loss (every kind where
/// [`LossKind::is_triplet`] holds).
pub fn triplet_value_and_gradient(
    spec: &LossSpec,
    t: &TripletInput<'_>,
) -> Result<(f64, LossGradient)> {
    if !spec.kind.is_triplet() {
        return Err(Error::usage(format!("{} is not a triplet loss", spec.kind)));
    }
    let n = t.anchor.len();
    let scale = if spec.kind == LossKind::Wabt { spec.r } else { 1.0 };
    let scaled: Vec<f64>;
    let anchor = if scale != 1.0 {
        scaled = t.anchor.iter().map(|x| scale * x).collect();
        &scaled[..]
    } else {
        t.anchor
    };
    let (dap, gap_a, gap_p) = distance_with_grad(spec.metric, anchor, t.positive)?;
    let (dan, gan_a, gan_n) = distance_with_grad(spec.metric, anchor, t.negative)?;
    let (dpn, gpn_p, gpn_n) = if uses_pn(spec.kind) {
        distance_with_grad(spec.metric, t.positive, t.negative)?
    } else {
        (0.0, vec![0.0; n], vec![0.0; n])
    };
    let (mut value, [c_ap, c_an, c_pn]) = triplet_terms(spec, dap, dan, dpn)?;

    let mut grad = LossGradient {
        d_anchor: vec![0.0; n],
        d_positive: vec![0.0; n],
        d_negative: vec![0.0; n],
    };
    // chain rule through the anchor scale
    axpy(&mut grad.d_anchor, c_ap * scale, &gap_a);
    axpy(&mut grad.d_anchor, c_an * scale, &gan_a);
    axpy(&mut grad.d_positive, c_ap, &gap_p);
    axpy(&mut grad.d_positive, c_pn, &gpn_p);
    axpy(&mut grad.d_negative, c_an, &gan_n);
    axpy(&mut grad.d_negative, c_pn, &gpn_n);

    if spec.kind == LossKind::Ctll {
        let (diff_norm, g) = l2_diff_with_grad(t.anchor, t.positive);
        value += spec.kappa * diff_norm - spec.gamma;
        axpy(&mut grad.d_anchor, spec.kappa, &g);
        axpy(&mut grad.d_positive, -spec.kappa, &g);
    }
    Ok((value, grad))
}

fn triplet_value(spec: &LossSpec, t: &TripletInput<'_>) -> Result<f64> {
    triplet_value_and_gradient(spec, t).map(|(v, _)| v)
}

/// OCAM with cosine distance, in its simplified single-fraction form.
pub fn ocam_loss(t: &TripletInput<'_>) -> Result<f64> {
    triplet_value(&LossSpec::new(LossKind::Ocam), t)
}

/// OCAM written with the balanced average and the adaptive margin kept as
/// separate terms. Algebraically identical to [`ocam_loss`].
pub fn ocam_loss_expanded(t: &TripletInput<'_>) -> Result<f64> {
    let dap = cosine_distance(t.anchor, t.positive)?;
    let dan = cosine_distance(t.anchor, t.negative)?;
    let dpn = cosine_distance(t.positive, t.negative)?;
    let adaptive_margin = (1.0 - dpn) / 2.0;
    Ok((dap - (dan + dpn) / 2.0 + adaptive_margin).max(0.0))
}

pub fn ocam_ablation_loss(
    t: &TripletInput<'_>,
    variant: AblationVariant,
    alpha_fixed: f64,
) -> Result<f64> {
    if !(alpha_fixed >= 0.0 && alpha_fixed.is_finite()) {
        return Err(Error::usage(format!("alpha_fixed = {alpha_fixed} must be >= 0")));
    }
    let kind = match variant {
        AblationVariant::NoPn => LossKind::OcamNoPn,
        AblationVariant::FixedMargin => LossKind::OcamFixedMargin,
        AblationVariant::Both => return triplet_loss(t, alpha_fixed),
    };
    triplet_value(&LossSpec::new(kind).with_alpha(alpha_fixed), t)
}

/// Traditional triplet hinge with cosine distance.
pub fn triplet_loss(t: &TripletInput<'_>, alpha: f64) -> Result<f64> {
    let spec = LossSpec::new(LossKind::Triplet).with_alpha(alpha);
    spec.validate()?;
    triplet_value(&spec, t)
}

// ---------------------------------------------------------------------------
// pairs and classification

/// Value and gradients `(d e1, d e2)` of the pair-wise contrastive loss.
pub fn contrastive_value_and_gradient(
    metric: Metric,
    e1: &[f64],
    e2: &[f64],
    same_class: bool,
    alpha: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (d, g1, g2) = distance_with_grad(metric, e1, e2)?;
    let (value, coeff) = if same_class {
        (0.5 * d * d, d)
    } else {
        let slack = alpha - d;
        if slack > 0.0 {
            (0.5 * slack * slack, -slack)
        } else {
            (0.0, 0.0)
        }
    };
    let scale = |g: Vec<f64>| g.into_iter().map(|x| coeff * x).collect();
    Ok((value, scale(g1), scale(g2)))
}

pub fn contrastive_loss(e1: &[f64], e2: &[f64], same_class: bool, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::usage(format!("alpha = {alpha} must be >= 0")));
    }
    contrastive_value_and_gradient(Metric::Cosine, e1, e2, same_class, alpha).map(|r| r.0)
}

pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

/// `-ln p[true_class]`, with `p` floored at `floor` before the log.
pub fn cross_entropy_loss_with_floor(probs: &[f64], true_class: usize, floor: f64) -> Result<f64> {
    let p = *probs.get(true_class).ok_or_else(|| {
        Error::usage(format!(
            "class {true_class} out of range for {} probabilities",
            probs.len()
        ))
    })?;
    if probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
        return Err(Error::usage("probabilities must lie in [0, 1]"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(-p.max(floor).ln())
}

pub fn cross_entropy_loss(probs: &[f64], true_class: usize) -> Result<f64> {
    cross_entropy_loss_with_floor(probs, true_class, DEFAULT_PROB_FLOOR)
}

/// Batch form: mean of the per-sample losses.
pub fn cross_entropy_batch(probs: &[Vec<f64>], classes: &[usize]) -> Result<f64> {
    if probs.len() != classes.len() || probs.is_empty() {
        return Err(Error::usage("cross entropy batch needs one class per nonempty row"));
    }
    let mut total = 0.0;
    for (p, &c) in probs.iter().zip(classes) {
        total += cross_entropy_loss(p, c)?;
    }
    Ok(total / probs.len() as f64)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross entropy of `softmax(logits)` and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> Result<(f64, Vec<f64>)> {
    if true_class >= logits.len() {
        return Err(Error::usage(format!(
            "class {true_class} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let nll = lse - logits[true_class];
    let cap = -DEFAULT_PROB_FLOOR.ln();
    if nll > cap {
        return Ok((cap, vec![0.0; logits.len()]));
    }
    let mut grad = softmax(logits);
    grad[true_class] -= 1.0;
    Ok((nll, grad))
}

// ---------------------------------------------------------------------------
// batch-level losses

/// How rows of an embedding batch combine into loss terms.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchLayout {
    /// `(anchor, positive, negative)` row indices.
    Triplets(Vec<(usize, usize, usize)>),
    /// `(row, row, same_class)`.
    Pairs(Vec<(usize, usize, bool)>),
    /// Class label per row; every row acts as an anchor and mines its
    /// hardest positive and negative within the batch.
    Grouped(Vec<usize>),
    /// Class label per row; rows are classifier logits.
    Classified(Vec<usize>),
}

/// Mean loss over the batch and its gradient with respect to every row.
pub fn loss_value_and_gradient(
    spec: &LossSpec,
    rows: &[Vec<f64>],
    layout: &BatchLayout,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let check = |i: usize| {
        if i >= rows.len() {
            Err(Error::usage(format!("row {i} out of range for batch of {}", rows.len())))
        } else {
            Ok(())
        }
    };
    let mut grads: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
    let (total, count) = match (spec.kind, layout) {
        (k, BatchLayout::Triplets(ts)) if k.is_triplet() => {
            let mut total = 0.0;
            for &(a, p, n) in ts {
                check(a)?;
                check(p)?;
                check(n)?;
                let t = TripletInput::new(&rows[a], &rows[p], &rows[n])?;
                let (v, g) = triplet_value_and_gradient(spec, &t)?;
                total += v;
                axpy(&mut grads[a], 1.0, &g.d_anchor);
                axpy(&mut grads[p], 1.0, &g.d_positive);
                axpy(&mut grads[n], 1.0, &g.d_negative);
            }
            (total, ts.len())
        }
        (LossKind::Contrastive, BatchLayout::Pairs(ps)) => {
            let mut total = 0.0;
            for &(i, j, same) in ps {
                check(i)?;
                check(j)?;
                let (v, gi, gj) =
                    contrastive_value_and_gradient(spec.metric, &rows[i], &rows[j], same, spec.alpha)?;
                total += v;
                axpy(&mut grads[i], 1.0, &gi);
                axpy(&mut grads[j], 1.0, &gj);
            }
            (total, ps.len())
        }
        (LossKind::TriEp, BatchLayout::Grouped(labels)) => {
            if labels.len() != rows.len() {
                return Err(Error::usage("grouped batch needs one label per row"));
            }
            let total = triep_accumulate(spec, rows, labels, &mut grads)?;
            (total, rows.len())
        }
        (LossKind::CrossEntropy, BatchLayout::Classified(labels)) => {
            if labels.len() != rows.len() {
                return Err(Error::usage("classified batch needs one label per row"));
            }
            let mut total = 0.0;
            for (i, &c) in labels.iter().enumerate() {
                let (v, g) = softmax_cross_entropy(&rows[i], c)?;
                total += v;
                grads[i] = g;
            }
            (total, rows.len())
        }
        (k, l) => {
            return Err(Error::usage(format!(
                "{k} cannot be evaluated on a {} batch",
                layout_name(l)
            )))
        }
    };
    if count == 0 {
        return Err(Error::usage("empty batch"));
    }
    let inv = 1.0 / count as f64;
    for g in &mut grads {
        g.iter_mut().for_each(|x| *x *= inv);
    }
    Ok((total * inv, grads))
}

fn layout_name(l: &BatchLayout) -> &'static str {
    match l {
        BatchLayout::Triplets(_) => "triplet",
        BatchLayout::Pairs(_) => "pair",
        BatchLayout::Grouped(_) => "class-grouped",
        BatchLayout::Classified(_) => "classified",
    }
}

/// Hardest-positive / hardest-negative mining. Ties go to the lowest row index.
fn triep_accumulate(
    spec: &LossSpec,
    rows: &[Vec<f64>],
    labels: &[usize],
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::usage("hardest-triplet batch needs at least two classes"));
    }
    let w_pos = spec.sigma1 * spec.sigma2;
    let w_neg = spec.beta1 * spec.beta2;
    let mut total = 0.0;
    for a in 0..rows.len() {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..rows.len() {
            if j == a {
                continue;
            }
            let d = distance(spec.metric, &rows[a], &rows[j])?;
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        let (Some((p, _)), Some((n, _))) = (hardest_pos, hardest_neg) else {
            return Err(Error::usage(format!(
                "row {a}: class {} has a single sample in the batch",
                labels[a]
            )));
        };
        let (dap, ga, gp) = distance_with_grad(spec.metric, &rows[a], &rows[p])?;
        let (dan, ga2, gn) = distance_with_grad(spec.metric, &rows[a], &rows[n])?;
        let h = w_pos * dap - w_neg * dan + spec.alpha;
        if h > 0.0 {
            total += h;
            axpy(&mut grads[a], w_pos, &ga);
            axpy(&mut grads[a], -w_neg, &ga2);
            axpy(&mut grads[p], w_pos, &gp);
            axpy(&mut grads[n], -w_neg, &gn);
        }
    }
    Ok(total)
}

/// Input to [`variant_triplet_loss`].
#[derive(Debug, Clone, Copy)]
pub enum VariantBatch<'a> {
    Triplets(&'a [TripletInput<'a>]),
    Grouped {
        embeddings: &'a [Vec<f64>],
        labels: &'a [usize],
    },
}

/// Mean loss of one of the published triplet variants over a batch.
pub fn variant_triplet_loss(spec: &LossSpec, batch: VariantBatch<'_>) -> Result<f64> {
    spec.validate()?;
    match (spec.kind, batch) {
        (LossKind::TriEp, VariantBatch::Grouped { embeddings, labels }) => {
            let layout = BatchLayout::Grouped(labels.to_vec());
            loss_value_and_gradient(spec, embeddings, &layout).map(|r| r.0)
        }
        (
            LossKind::Wabt | LossKind::DmTri | LossKind::CondTri | LossKind::Ctll,
            VariantBatch::Triplets(ts),
        ) => {
            if ts.is_empty() {
                return Err(Error::usage("empty batch"));
            }
            let mut total = 0.0;
            for t in ts {
                total += triplet_value(spec, t)?;
            }
            Ok(total / ts.len() as f64)
        }
        (LossKind::TriEp, _) => Err(Error::usage("TriEP needs a class-grouped batch")),
        (k, _) => Err(Error::usage(format!(
            "{k} is not a variant triplet loss or got the wrong batch shape"
        ))),
    }
}
