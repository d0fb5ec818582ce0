//! Feed-forward embedding model, triplet/pair sampling and the Adam training
//! loop.
//!
//! Parameters of all layers live in one flat `Vec<f64>`: for each layer the
//! `fan_in x fan_out` weight matrix (row-major, `w[i * fan_out + o]`) followed
//! by `fan_out` biases. The optional classifier head used by the
//! cross-entropy loss comes last.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::losses::{loss_value_and_gradient, BatchLayout, LossKind, LossSpec, Metric};
use crate::metricspace::norm;

const INIT_STREAM: u64 = 0x494e;
const TRAIN_STREAM: u64 = 0x5452;

/// Added to the first coordinate of an all-zero embedding before a cosine loss.
pub const ZERO_NORM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::usage(format!("unknown activation '{s}'"))),
        }
    }
}

/// Architecture: `input_dim -> hidden... -> embedding_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    /// Applied to the input of the final (embedding) layer while training.
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, embedding_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden,
            embedding_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::usage("model dimensions must all be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::usage(format!(
                "dropout rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.embedding_dim);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl Layer {
    fn affine(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut z = params[self.b..self.b + self.fan_out].to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &params[self.w + i * self.fan_out..self.w + (i + 1) * self.fan_out];
            for (zo, &wio) in z.iter_mut().zip(row) {
                *zo += xi * wio;
            }
        }
        z
    }

    /// Accumulates weight/bias gradients into `grads` and returns the gradient
    /// with respect to the layer input.
    fn backward(&self, params: &[f64], input: &[f64], g_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut g_in = vec![0.0; self.fan_in];
        for (i, &xi) in input.iter().enumerate() {
            let base = self.w + i * self.fan_out;
            let row = &params[base..base + self.fan_out];
            let grow = &mut grads[base..base + self.fan_out];
            let mut acc = 0.0;
            for o in 0..self.fan_out {
                grow[o] += xi * g_out[o];
                acc += row[o] * g_out[o];
            }
            g_in[i] = acc;
        }
        for (gb, g) in grads[self.b..self.b + self.fan_out].iter_mut().zip(g_out) {
            *gb += g;
        }
        g_in
    }
}

fn build_layers(widths: &[usize], head: Option<usize>) -> (Vec<Layer>, Option<Layer>, usize) {
    let mut offset = 0;
    let mut make = |fan_in: usize, fan_out: usize| {
        let l = Layer {
            fan_in,
            fan_out,
            w: offset,
            b: offset + fan_in * fan_out,
        };
        offset += fan_in * fan_out + fan_out;
        l
    };
    let trunk: Vec<Layer> = widths.windows(2).map(|w| make(w[0], w[1])).collect();
    let head = head.map(|j| make(*widths.last().expect("nonempty"), j));
    (trunk, head, offset)
}

/// Weights and biases of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    head_classes: Option<usize>,
    params: Vec<f64>,
    trunk: Vec<Layer>,
    head: Option<Layer>,
}

/// Per-sample forward record needed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to every trunk layer, after activation and dropout.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per unit of the final layer input.
    mask: Option<Vec<f64>>,
    pub embedding: Vec<f64>,
    pub logits: Option<Vec<f64>>,
}

impl ModelParams {
    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(config: &ModelConfig, head_classes: Option<usize>, seed: u64) -> Result<Self> {
        config.validate()?;
        if head_classes == Some(0) {
            return Err(Error::usage("classifier head needs at least one class"));
        }
        let (trunk, head, total) = build_layers(&config.widths(), head_classes);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        for l in trunk.iter().chain(head.iter()) {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut params[l.w..l.b] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            head_classes,
            params,
            trunk,
            head,
        })
    }

    pub fn from_parts(config: ModelConfig, head_classes: Option<usize>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (trunk, head, total) = build_layers(&config.widths(), head_classes);
        if params.len() != total {
            return Err(Error::Format(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(ModelParams {
            config,
            head_classes,
            params,
            trunk,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head_classes(&self) -> Option<usize> {
        self.head_classes
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(fan_in, fan_out)` of each trunk layer, then the head if present.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.trunk
            .iter()
            .chain(self.head.iter())
            .map(|l| (l.fan_in, l.fan_out))
            .collect()
    }

    /// Weight matrix of layer `l` as rows of length `fan_out`.
    pub fn weights(&self, l: usize) -> Vec<&[f64]> {
        let layer = self.trunk.iter().chain(self.head.iter()).nth(l).expect("layer index");
        self.params[layer.w..layer.b].chunks(layer.fan_out).collect()
    }

    /// Forward pass keeping what backprop needs. Dropout is active exactly
    /// when `dropout` carries an rng.
    pub fn forward_trace(&self, x: &[f64], mut dropout: Option<&mut dyn RngCore>) -> Result<ForwardTrace> {
        if x.len() != self.config.input_dim {
            return Err(Error::usage(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        let last = self.trunk.len() - 1;
        let rate = self.config.dropout_rate;
        let mut inputs = Vec::with_capacity(self.trunk.len());
        let mut pre = Vec::with_capacity(last);
        let mut mask = None;
        let mut h = x.to_vec();
        let mut embedding = Vec::new();
        for (l, layer) in self.trunk.iter().enumerate() {
            if let (true, true, Some(rng)) = (l == last, rate > 0.0, dropout.as_deref_mut()) {
                let keep = 1.0 / (1.0 - rate);
                let m: Vec<f64> = (0..h.len())
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect();
                h.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                mask = Some(m);
            }
            let z = layer.affine(&self.params, &h);
            inputs.push(h);
            if l < last {
                h = z.iter().map(|&v| self.config.activation.apply(v)).collect();
                pre.push(z);
            } else {
                embedding = z;
                h = Vec::new();
            }
        }
        let logits = self.head.map(|hd| hd.affine(&self.params, &embedding));
        Ok(ForwardTrace {
            inputs,
            pre,
            mask,
            embedding,
            logits,
        })
    }

    /// Embedding of `x`. With `training == false` (or zero dropout) the result
    /// does not depend on `rng`.
    pub fn forward(&self, x: &[f64], training: bool, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.forward_trace(x, training.then_some(rng)).map(|t| t.embedding)
    }

    /// Inference-mode embedding.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_trace(x, None).map(|t| t.embedding)
    }

    /// Inference-mode embeddings of many inputs, in input order.
    pub fn embed_all(&self, xs: &[Vec<f64>], exec: Execution) -> Result<Vec<Vec<f64>>> {
        map_range(xs.len(), exec, |i| self.embed(&xs[i])).into_iter().collect()
    }

    /// Accumulates parameter gradients for one sample into `grads`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_embedding: &[f64],
        d_logits: Option<&[f64]>,
        grads: &mut [f64],
    ) {
        let mut g = d_embedding.to_vec();
        if let (Some(head), Some(gl)) = (self.head, d_logits) {
            let back = head.backward(&self.params, &trace.embedding, gl, grads);
            g.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
        }
        let last = self.trunk.len() - 1;
        for l in (0..self.trunk.len()).rev() {
            let mut g_in = self.trunk[l].backward(&self.params, &trace.inputs[l], &g, grads);
            if l == 0 {
                break;
            }
            if l == last {
                if let Some(m) = &trace.mask {
                    g_in.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
                }
            }
            for (v, &z) in g_in.iter_mut().zip(&trace.pre[l - 1]) {
                *v *= self.config.activation.derivative(z);
            }
            g = g_in;
        }
    }
}

/// Convenience constructor with ReLU hidden layers and no dropout.
pub fn init_model(input_dim: usize, hidden: &[usize], embedding_dim: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(&ModelConfig::new(input_dim, hidden.to_vec(), embedding_dim), None, seed)
}

/// Makes an all-zero vector usable by cosine distance.
pub fn guard_zero_norm(e: &mut [f64]) {
    if norm(e) == 0.0 {
        if let Some(first) = e.first_mut() {
            *first += ZERO_NORM_EPSILON;
        }
    }
}

// ---------------------------------------------------------------------------
// sampling

/// Dataset-index triplets `(anchor, positive, negative)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<(usize, usize, usize)>,
}

impl TripletBatch {
    pub fn batch_size(&self) -> usize {
        self.triplets.len()
    }
}

/// Class bookkeeping for drawing triplets, pairs and class-grouped batches.
#[derive(Debug, Clone)]
pub struct Sampler {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    /// Samples whose class has at least two members.
    anchors: Vec<usize>,
    /// Classes with at least two members.
    rich_classes: Vec<usize>,
}

impl Sampler {
    pub fn new(ds: &Dataset) -> Result<Self> {
        if ds.num_classes() < 2 {
            return Err(Error::usage("triplet sampling needs at least two classes"));
        }
        let members = ds.members_by_class();
        let rich_classes: Vec<usize> = (0..members.len()).filter(|&c| members[c].len() >= 2).collect();
        if rich_classes.is_empty() {
            return Err(Error::usage("no class has two samples to form an anchor-positive pair"));
        }
        let anchors = (0..ds.len()).filter(|&i| members[ds.labels()[i]].len() >= 2).collect();
        Ok(Sampler {
            labels: ds.labels().to_vec(),
            members,
            anchors,
            rich_classes,
        })
    }

    fn same_class_other<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let m = &self.members[self.labels[i]];
        let pos = m.iter().position(|&x| x == i).expect("member of own class");
        let k = rng.random_range(0..m.len() - 1);
        m[if k >= pos { k + 1 } else { k }]
    }

    fn other_class<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let own = self.members[self.labels[i]].len();
        let mut k = rng.random_range(0..self.labels.len() - own);
        for (c, m) in self.members.iter().enumerate() {
            if c == self.labels[i] {
                continue;
            }
            if k < m.len() {
                return m[k];
            }
            k -= m.len();
        }
        unreachable!("k drawn below the number of other-class samples")
    }

    /// Uniform anchor among samples of classes with two or more members,
    /// uniform positive among its other class members, uniform negative among
    /// all other-class samples.
    pub fn triplets<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TripletBatch {
        let triplets = (0..batch_size)
            .map(|_| {
                let a = self.anchors[rng.random_range(0..self.anchors.len())];
                let p = self.same_class_other(a, rng);
                let n = self.other_class(a, rng);
                (a, p, n)
            })
            .collect();
        TripletBatch { triplets }
    }

    /// Alternating same-class and different-class pairs, starting with same.
    pub fn pairs<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<(usize, usize, bool)> {
        (0..count)
            .map(|k| {
                if k % 2 == 0 {
                    let a = self.anchors[rng.random_range(0..self.anchors.len())];
                    (a, self.same_class_other(a, rng), true)
                } else {
                    let a = rng.random_range(0..self.labels.len());
                    (a, self.other_class(a, rng), false)
                }
            })
            .collect()
    }

    /// `classes` distinct classes, each contributing up to `per_class` distinct
    /// samples. Only classes with two or more members are drawn.
    pub fn grouped<R: Rng + ?Sized>(&self, classes: usize, per_class: usize, rng: &mut R) -> Vec<usize> {
        let take = classes.min(self.rich_classes.len());
        let picked = index::sample(rng, self.rich_classes.len(), take);
        let mut out = Vec::with_capacity(take * per_class);
        for ci in picked.iter() {
            let m = &self.members[self.rich_classes[ci]];
            let k = per_class.min(m.len());
            out.extend(index::sample(rng, m.len(), k).iter().map(|j| m[j]));
        }
        out
    }

    /// Uniform samples with replacement.
    pub fn points<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..self.labels.len())).collect()
    }
}

pub fn sample_triplets<R: Rng + ?Sized>(ds: &Dataset, batch_size: usize, rng: &mut R) -> Result<TripletBatch> {
    Ok(Sampler::new(ds)?.triplets(batch_size, rng))
}

/// A training batch: the dataset rows to embed and how their outputs combine.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub layout: BatchLayout,
}

impl Batch {
    /// Deduplicates sample indices in order of first appearance.
    fn from_tuples<T>(
        tuples: &[T],
        members: impl Fn(&T) -> Vec<usize>,
        rebuild: impl Fn(&T, &[usize]) -> T,
    ) -> (Vec<usize>, Vec<T>) {
        let mut rows = Vec::new();
        let mut slot = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(tuples.len());
        for t in tuples {
            let pos: Vec<usize> = members(t)
                .into_iter()
                .map(|i| {
                    *slot.entry(i).or_insert_with(|| {
                        rows.push(i);
                        rows.len() - 1
                    })
                })
                .collect();
            out.push(rebuild(t, &pos));
        }
        (rows, out)
    }

    pub fn from_triplets(tb: &TripletBatch) -> Batch {
        let (rows, ts) = Self::from_tuples(&tb.triplets, |&(a, p, n)| vec![a, p, n], |_, s| (s[0], s[1], s[2]));
        Batch {
            rows,
            layout: BatchLayout::Triplets(ts),
        }
    }

    pub fn from_pairs(pairs: &[(usize, usize, bool)]) -> Batch {
        let (rows, ps) = Self::from_tuples(pairs, |&(i, j, _)| vec![i, j], |&(_, _, same), s| (s[0], s[1], same));
        Batch {
            rows,
            layout: BatchLayout::Pairs(ps),
        }
    }

    pub fn grouped(ds: &Dataset, rows: Vec<usize>) -> Batch {
        let labels = rows.iter().map(|&i| ds.labels()[i]).collect();
        Batch {
            rows,
            layout: BatchLayout::Grouped(labels),
        }
    }

    pub fn classified(ds: &Dataset, rows: Vec<usize>) -> Batch {
        let labels = rows.iter().map(|&i| ds.labels()[i]).collect();
        Batch {
            rows,
            layout: BatchLayout::Classified(labels),
        }
    }
}

/// Mean batch loss and its gradient with respect to every model parameter.
///
/// `dropout_rng` enables training-mode dropout; `None` evaluates the network
/// deterministically.
pub fn batch_objective(
    model: &ModelParams,
    ds: &Dataset,
    batch: &Batch,
    spec: &LossSpec,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<f64>)> {
    let classify = spec.kind == LossKind::CrossEntropy;
    if classify && model.head_classes.is_none() {
        return Err(Error::usage("cross entropy training needs a classifier head"));
    }
    let mut dropout_rng = dropout_rng;
    let mut traces = Vec::with_capacity(batch.rows.len());
    for &i in &batch.rows {
        let rng = dropout_rng.as_deref_mut().map(|r| r as &mut dyn RngCore);
        traces.push(model.forward_trace(ds.feature(i), rng)?);
    }
    let outputs: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| {
            if classify {
                t.logits.clone().expect("head present")
            } else {
                let mut e = t.embedding.clone();
                if spec.metric == Metric::Cosine {
                    guard_zero_norm(&mut e);
                }
                e
            }
        })
        .collect();
    let (value, row_grads) = loss_value_and_gradient(spec, &outputs, &batch.layout)?;
    let mut grads = vec![0.0; model.params.len()];
    for (trace, g) in traces.iter().zip(&row_grads) {
        if classify {
            let zero = vec![0.0; model.embedding_dim()];
            model.backward(trace, &zero, Some(g), &mut grads);
        } else {
            model.backward(trace, g, None, &mut grads);
        }
    }
    Ok((value, grads))
}

// ---------------------------------------------------------------------------
// optimization

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::usage("adam: parameter, gradient and state shapes differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            step: state.step as usize,
            msg: format!("gradient of parameter {i} is {}", grads[i]),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub steps: usize,
    /// Triplets (or pairs) per step; cross entropy draws three samples per unit.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Recorded for provenance. Training always runs on one thread in a fixed order.
    pub deterministic: bool,
    /// Class-grouped batches for hardest mining: classes per batch.
    pub group_classes: usize,
    /// Class-grouped batches for hardest mining: samples per class.
    pub group_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::new(LossKind::Ocam),
            steps: 1500,
            batch_size: 20,
            adam: AdamConfig::default(),
            seed: 0,
            deterministic: true,
            group_classes: 4,
            group_size: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::usage("train.steps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("train.batch_size must be positive"));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::usage(format!("learning rate {} must be positive", a.learning_rate)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::usage("Adam betas must lie in [0, 1)"));
        }
        if !(a.epsilon > 0.0 && a.epsilon.is_finite()) {
            return Err(Error::usage("Adam epsilon must be positive"));
        }
        if self.group_classes < 2 || self.group_size < 2 {
            return Err(Error::usage("grouped batches need at least 2 classes of 2 samples"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Mean batch loss at every step, before that step's update.
    pub history: Vec<f64>,
}

fn draw_batch(
    spec: &LossSpec,
    cfg: &TrainConfig,
    ds: &Dataset,
    sampler: &Sampler,
    rng: &mut ChaCha8Rng,
) -> Batch {
    match spec.kind {
        LossKind::Contrastive => Batch::from_pairs(&sampler.pairs(cfg.batch_size, rng)),
        LossKind::TriEp => Batch::grouped(ds, sampler.grouped(cfg.group_classes, cfg.group_size, rng)),
        LossKind::CrossEntropy => Batch::classified(ds, sampler.points(3 * cfg.batch_size, rng)),
        _ => Batch::from_triplets(&sampler.triplets(cfg.batch_size, rng)),
    }
}

/// Trains a fresh model. The initial weights and every random draw derive
/// from `cfg.seed`, so equal inputs give bit-identical outcomes.
pub fn train(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.input_dim != ds.dim() {
        return Err(Error::usage(format!(
            "model input dimension {} does not match data dimension {}",
            model_cfg.input_dim,
            ds.dim()
        )));
    }
    let head = (cfg.loss.kind == LossKind::CrossEntropy).then(|| ds.num_classes());
    let mut model = ModelParams::init(model_cfg, head, cfg.seed)?;
    let sampler = Sampler::new(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut state = AdamState::new(model.params.len());
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(&cfg.loss, cfg, ds, &sampler, &mut rng);
        let (value, grads) = batch_objective(&model, ds, &batch, &cfg.loss, Some(&mut rng))?;
        if !value.is_finite() {
            return Err(Error::Numeric {
                step,
                msg: format!("loss is {value}"),
            });
        }
        adam_step(&mut model.params, &grads, &mut state, &cfg.adam).map_err(|e| match e {
            Error::Numeric { msg, .. } => Error::Numeric { step, msg },
            other => other,
        })?;
        history.push(value);
    }
    Ok(TrainOutcome { model, history })
}

// ---------------------------------------------------------------------------
// checkpoints

const CHECKPOINT_MAGIC: &[u8; 8] = b"OCAMCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained model plus the hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    input_dim: usize,
    hidden: Vec<usize>,
    embedding_dim: usize,
    activation: Activation,
    dropout_rate: f64,
    head_classes: Option<usize>,
    layer_shapes: Vec<(usize, usize)>,
    num_params: usize,
    config_hash: String,
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, then every
/// parameter as a little-endian `f64`.
pub fn write_checkpoint<W: Write>(ck: &Checkpoint, mut w: W) -> Result<()> {
    let m = &ck.model;
    let header = CheckpointHeader {
        input_dim: m.config.input_dim,
        hidden: m.config.hidden.clone(),
        embedding_dim: m.config.embedding_dim,
        activation: m.config.activation,
        dropout_rate: m.config.dropout_rate,
        head_classes: m.head_classes,
        layer_shapes: m.layer_shapes(),
        num_params: m.params.len(),
        config_hash: ck.config_hash.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &m.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let h: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let mut params = Vec::with_capacity(h.num_params);
    for _ in 0..h.num_params {
        r.read_exact(&mut b8)?;
        params.push(f64::from_le_bytes(b8));
    }
    let config = ModelConfig {
        input_dim: h.input_dim,
        hidden: h.hidden,
        embedding_dim: h.embedding_dim,
        activation: h.activation,
        dropout_rate: h.dropout_rate,
    };
    let model = ModelParams::from_parts(config, h.head_classes, params)?;
    if model.layer_shapes() != h.layer_shapes {
        return Err(Error::Format("layer shapes disagree with the architecture".into()));
    }
    Ok(Checkpoint {
        model,
        config_hash: h.config_hash,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_checkpoint(ck, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(file))
}
