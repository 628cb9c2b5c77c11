//! Dense ReLU networks with a target head `f` and an optional group head `g`,
//! trained with hand-written backpropagation and Adam.
//!
//! All parameters live in one flat vector. [`Layout`] maps layers and heads
//! onto it, which keeps the optimizer, finite-difference checks and
//! persistence trivial.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, StratifiedBatcher};
use crate::error::{Error, Result};
use crate::fairness::Regularizer;
use crate::math::{bce_logit, dot, sigmoid};
use crate::stats::average_precision;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unconstrained,
    RegSquared,
    RegAbs,
    TwoHead,
}

impl Method {
    pub fn has_group_head(self) -> bool {
        self == Method::TwoHead
    }

    pub fn regularizer(self) -> Option<Regularizer> {
        match self {
            Method::RegSquared => Some(Regularizer::Squared),
            Method::RegAbs => Some(Regularizer::Absolute),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Fairness weight; only read by the regularized methods.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub lr_drop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Unconstrained,
            lambda: 0.0,
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            hidden_widths: vec![32, 32],
            lr_drop_patience: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda", "must be finite and nonnegative"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::validation("hidden_widths", "need at least one layer, all widths positive"));
        }
        if self.lr_drop_patience == 0 {
            return Err(Error::validation("lr_drop_patience", "must be positive"));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    input_dim: usize,
    widths: Vec<usize>,
    two_head: bool,
    /// `(weights_offset, bias_offset)` per hidden layer; weights are `out x in` row-major.
    layers: Vec<(usize, usize)>,
    head_f: usize,
    head_g: Option<usize>,
    total: usize,
}

impl Layout {
    pub fn new(input_dim: usize, widths: &[usize], two_head: bool) -> Self {
        let mut offset = 0;
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &w in widths {
            layers.push((offset, offset + w * fan_in));
            offset += w * fan_in + w;
            fan_in = w;
        }
        let head_f = offset;
        offset += fan_in + 1;
        let head_g = two_head.then(|| {
            let o = offset;
            offset += fan_in + 1;
            o
        });
        Self {
            input_dim,
            widths: widths.to_vec(),
            two_head,
            layers,
            head_f,
            head_g,
            total: offset,
        }
    }

    pub fn n_params(&self) -> usize {
        self.total
    }

    /// Width `m` of the last-layer representation.
    pub fn repr_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&self.input_dim)
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.widths[layer - 1]
        }
    }
}

/// A linear read-out `w · z + b` over the last-layer representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layout: Layout,
    params: Vec<f64>,
}

/// Reusable per-sample activation buffers.
#[derive(Clone, Debug)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Network {
    /// All-zero parameters.
    pub fn zeros(input_dim: usize, widths: &[usize], two_head: bool) -> Self {
        let layout = Layout::new(input_dim, widths, two_head);
        let params = vec![0.0; layout.total];
        Self { layout, params }
    }

    /// Kaiming-style uniform initialization: hidden weights in `±sqrt(6/fan_in)`,
    /// head weights in `±sqrt(1/fan_in)`, zero biases.
    pub fn init(input_dim: usize, widths: &[usize], two_head: bool, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input_dim, widths, two_head);
        let layout = net.layout.clone();
        for (l, &(w_off, b_off)) in layout.layers.iter().enumerate() {
            let bound = (6.0 / layout.fan_in(l) as f64).sqrt();
            for p in &mut net.params[w_off..b_off] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let m = layout.repr_dim();
        let bound = (1.0 / m as f64).sqrt();
        for off in std::iter::once(layout.head_f).chain(layout.head_g) {
            for p in &mut net.params[off..off + m] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.layout.widths
    }

    pub fn has_group_head(&self) -> bool {
        self.layout.two_head
    }

    pub fn repr_dim(&self) -> usize {
        self.layout.repr_dim()
    }

    pub fn n_layers(&self) -> usize {
        self.layout.widths.len()
    }

    /// `(weights, bias)` of hidden layer `l`; weights are `out x in` row-major.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layout.layers[l];
        let out = self.layout.widths[l];
        (&self.params[w..b], &self.params[b..b + out])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w, b) = self.layout.layers[l];
        let out = self.layout.widths[l];
        let (left, right) = self.params.split_at_mut(b);
        (&mut left[w..], &mut right[..out])
    }

    pub fn head_f(&self) -> Head {
        self.head_at(self.layout.head_f)
    }

    pub fn head_g(&self) -> Option<Head> {
        self.layout.head_g.map(|o| self.head_at(o))
    }

    fn head_at(&self, off: usize) -> Head {
        let m = self.repr_dim();
        Head {
            weights: self.params[off..off + m].to_vec(),
            bias: self.params[off + m],
        }
    }

    pub fn set_head_f(&mut self, head: &Head) {
        let off = self.layout.head_f;
        self.write_head(off, head);
    }

    pub fn set_head_g(&mut self, head: &Head) -> Result<()> {
        let off = self
            .layout
            .head_g
            .ok_or_else(|| Error::argument("network has no group head"))?;
        self.write_head(off, head);
        Ok(())
    }

    fn write_head(&mut self, off: usize, head: &Head) {
        let m = self.repr_dim();
        assert_eq!(head.weights.len(), m, "head width mismatch");
        self.params[off..off + m].copy_from_slice(&head.weights);
        self.params[off + m] = head.bias;
    }

    pub fn scratch(&self) -> Scratch {
        let max_w = self.layout.widths.iter().copied().max().unwrap_or(0);
        Scratch {
            acts: self.layout.widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: vec![0.0; max_w],
            delta_prev: vec![0.0; max_w],
        }
    }

    /// Runs the backbone, leaving post-ReLU activations in `scratch`.
    fn forward_backbone(&self, x: &[f64], scratch: &mut Scratch) {
        debug_assert_eq!(x.len(), self.layout.input_dim);
        for l in 0..self.layout.widths.len() {
            let (w, b) = self.layer(l);
            let fan_in = self.layout.fan_in(l);
            let (prev, rest) = scratch.acts.split_at_mut(l);
            let input: &[f64] = if l == 0 { x } else { &prev[l - 1] };
            for (j, out) in rest[0].iter_mut().enumerate() {
                let z = dot(&w[j * fan_in..(j + 1) * fan_in], input) + b[j];
                *out = z.max(0.0);
            }
        }
    }

    fn repr<'a>(&self, scratch: &'a Scratch) -> &'a [f64] {
        scratch.acts.last().expect("at least one hidden layer")
    }

    /// `(f(x), g(x))`; `g` is `None` for single-head networks.
    pub fn forward(&self, x: &[f64], scratch: &mut Scratch) -> (f64, Option<f64>) {
        self.forward_backbone(x, scratch);
        let z = self.repr(scratch);
        let m = z.len();
        let off = self.layout.head_f;
        let f = dot(&self.params[off..off + m], z) + self.params[off + m];
        let g = self
            .layout
            .head_g
            .map(|off| dot(&self.params[off..off + m], z) + self.params[off + m]);
        (f, g)
    }

    /// Backpropagates head gradients `(d_f, d_g)` for the input whose forward
    /// pass is in `scratch`, accumulating into `grad`.
    fn backward(&self, x: &[f64], scratch: &mut Scratch, d_f: f64, d_g: f64, grad: &mut [f64]) {
        let n_layers = self.layout.widths.len();
        let m = self.repr_dim();
        let Scratch {
            acts,
            delta,
            delta_prev,
        } = scratch;
        let z = &acts[n_layers - 1];

        let off_f = self.layout.head_f;
        for k in 0..m {
            grad[off_f + k] += d_f * z[k];
            delta[k] = d_f * self.params[off_f + k];
        }
        grad[off_f + m] += d_f;
        if let Some(off_g) = self.layout.head_g {
            for k in 0..m {
                grad[off_g + k] += d_g * z[k];
                delta[k] += d_g * self.params[off_g + k];
            }
            grad[off_g + m] += d_g;
        }

        for l in (0..n_layers).rev() {
            let out = self.layout.widths[l];
            let fan_in = self.layout.fan_in(l);
            let (w_off, b_off) = self.layout.layers[l];
            for j in 0..out {
                if acts[l][j] <= 0.0 {
                    delta[j] = 0.0;
                }
            }
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            for j in 0..out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &mut grad[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                for (g, &v) in row.iter_mut().zip(input) {
                    *g += dj * v;
                }
                grad[b_off + j] += dj;
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                delta_prev[..fan_in].iter_mut().for_each(|v| *v = 0.0);
                for j in 0..out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    for (dp, &wji) in delta_prev[..fan_in].iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *dp += dj * wji;
                    }
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }

    fn check_dim(&self, ds: &Dataset) -> Result<()> {
        if ds.n_features() != self.input_dim() {
            return Err(Error::argument(format!(
                "dataset has {} features, network expects {}",
                ds.n_features(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Head outputs for every row of `split`, in dataset row order.
    pub fn score(&self, ds: &Dataset, split: Split) -> Result<Scores> {
        self.check_dim(ds)?;
        let indices = ds.indices(split);
        let mut scratch = self.scratch();
        let mut f = Vec::with_capacity(indices.len());
        let mut g = self.has_group_head().then(|| Vec::with_capacity(indices.len()));
        for &i in &indices {
            let (fi, gi) = self.forward(ds.row(i), &mut scratch);
            f.push(fi);
            if let (Some(g), Some(gi)) = (g.as_mut(), gi) {
                g.push(gi);
            }
        }
        Ok(Scores { split, indices, f, g })
    }

    /// Last-layer representation `z(x)`, one row per example of `split`.
    pub fn last_layer(&self, ds: &Dataset, split: Split) -> Result<DMatrix<f64>> {
        self.check_dim(ds)?;
        let indices = ds.indices(split);
        let m = self.repr_dim();
        let mut scratch = self.scratch();
        let mut out = DMatrix::zeros(indices.len(), m);
        for (r, &i) in indices.iter().enumerate() {
            self.forward_backbone(ds.row(i), &mut scratch);
            for (c, v) in self.repr(&scratch).iter().enumerate() {
                out[(r, c)] = *v;
            }
        }
        Ok(out)
    }

    /// Folds `f + a1·g + a2` into a single target head over the same backbone.
    pub fn compress(&self, a1: f64, a2: f64) -> Result<Network> {
        let g = self
            .head_g()
            .ok_or_else(|| Error::argument("compression needs a two-head network"))?;
        let f = self.head_f();
        let combined = Head {
            weights: f.weights.iter().zip(&g.weights).map(|(wf, wg)| wf + a1 * wg).collect(),
            bias: f.bias + a1 * g.bias + a2,
        };
        let mut out = Network::zeros(self.input_dim(), self.hidden_widths(), false);
        let backbone_len = self.layout.head_f;
        out.params[..backbone_len].copy_from_slice(&self.params[..backbone_len]);
        out.set_head_f(&combined);
        Ok(out)
    }

    pub(crate) fn from_parts(layout: Layout, params: Vec<f64>) -> Self {
        debug_assert_eq!(layout.total, params.len());
        Self { layout, params }
    }
}

/// Materialized head outputs over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub split: Split,
    /// Dataset row index of each entry.
    pub indices: Vec<usize>,
    /// Target logits.
    pub f: Vec<f64>,
    /// Group-head regression outputs, when the network has that head.
    pub g: Option<Vec<f64>>,
}

impl Scores {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// `1(f > 0)` per row.
    pub fn decisions(&self) -> Vec<u8> {
        self.f.iter().map(|&v| u8::from(v > 0.0)).collect()
    }

    pub fn require_g(&self) -> Result<&[f64]> {
        self.g
            .as_deref()
            .ok_or_else(|| Error::argument("scores lack group-head outputs"))
    }
}

/// Mean binary cross entropy of logits against labels.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::argument(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::argument("empty input"));
    }
    Ok(logits.iter().zip(labels).map(|(&l, &y)| bce_logit(l, y)).sum::<f64>() / logits.len() as f64)
}

/// One term of a training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    /// Mean BCE of the target head.
    Bce,
    /// Mean squared error of the group head against `s`.
    HeadMse,
    RegSquared,
    RegAbs,
}

/// Contiguous rows of a mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub x: &'a [f64],
    pub y: &'a [u8],
    pub s: &'a [u8],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn objective_terms(method: Method, lambda: f64) -> Vec<(LossTerm, f64)> {
    match method {
        Method::Unconstrained => vec![(LossTerm::Bce, 1.0)],
        Method::RegSquared if lambda > 0.0 => vec![(LossTerm::Bce, 1.0), (LossTerm::RegSquared, lambda)],
        Method::RegAbs if lambda > 0.0 => vec![(LossTerm::Bce, 1.0), (LossTerm::RegAbs, lambda)],
        Method::RegSquared | Method::RegAbs => vec![(LossTerm::Bce, 1.0)],
        Method::TwoHead => vec![(LossTerm::Bce, 1.0), (LossTerm::HeadMse, 1.0)],
    }
}

/// Weighted sum of loss terms on a batch and, if `grad` is given, its
/// gradient (overwritten) with respect to the flat parameters.
pub fn batch_objective(
    net: &Network,
    batch: Batch<'_>,
    terms: &[(LossTerm, f64)],
    scratch: &mut Scratch,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = batch.len();
    let d = net.input_dim();
    let mut f = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let (fi, gi) = net.forward(&batch.x[i * d..(i + 1) * d], scratch);
        f.push(fi);
        g.push(gi.unwrap_or(0.0));
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_f = vec![0.0; n];
    let mut d_g = vec![0.0; n];
    for &(term, weight) in terms {
        match term {
            LossTerm::Bce => {
                for i in 0..n {
                    loss += weight * inv_n * bce_logit(f[i], batch.y[i]);
                    d_f[i] += weight * inv_n * (sigmoid(f[i]) - batch.y[i] as f64);
                }
            }
            LossTerm::HeadMse => {
                for i in 0..n {
                    let r = g[i] - batch.s[i] as f64;
                    loss += weight * inv_n * r * r;
                    d_g[i] += weight * inv_n * 2.0 * r;
                }
            }
            LossTerm::RegSquared | LossTerm::RegAbs => {
                let reg = if term == LossTerm::RegSquared {
                    Regularizer::Squared
                } else {
                    Regularizer::Absolute
                };
                // A batch missing one group contributes nothing.
                if let Ok((value, dl)) = reg.value_and_grad(&f, batch.s) {
                    loss += weight * value;
                    for i in 0..n {
                        d_f[i] += weight * dl[i];
                    }
                }
            }
        }
    }

    if let Some(grad) = grad.as_deref_mut() {
        grad.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if d_f[i] == 0.0 && d_g[i] == 0.0 {
                continue;
            }
            let x = &batch.x[i * d..(i + 1) * d];
            net.forward_backbone(x, scratch);
            net.backward(x, scratch, d_f[i], d_g[i], grad);
        }
    }
    loss
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Per-epoch training diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_average_precision: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    /// Epoch (0-based) whose snapshot was returned.
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

struct Gathered {
    x: Vec<f64>,
    y: Vec<u8>,
    s: Vec<u8>,
}

impl Gathered {
    fn new(ds: &Dataset, rows: &[usize]) -> Self {
        let mut out = Self {
            x: Vec::with_capacity(rows.len() * ds.n_features()),
            y: Vec::with_capacity(rows.len()),
            s: Vec::with_capacity(rows.len()),
        };
        out.fill(ds, rows);
        out
    }

    fn fill(&mut self, ds: &Dataset, rows: &[usize]) {
        self.x.clear();
        self.y.clear();
        self.s.clear();
        for &i in rows {
            self.x.extend_from_slice(ds.row(i));
            self.y.push(ds.targets()[i]);
            self.s.push(ds.protected()[i]);
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch {
            x: &self.x,
            y: &self.y,
            s: &self.s,
        }
    }
}

/// Trains a network; see [`train_with_history`].
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_with_history(ds, cfg).map(|o| o.network)
}

/// Trains on the train split with stratified batches and Adam.
///
/// The learning rate drops tenfold once validation loss has failed to improve
/// for more than `lr_drop_patience` consecutive epochs. The returned snapshot
/// is the epoch with the highest validation average precision of `f`, or the
/// lowest validation loss when validation holds a single label
/// (earliest on ties).
pub fn train_with_history(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.check_splits(false)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::init(
        ds.n_features(),
        &cfg.hidden_widths,
        cfg.method.has_group_head(),
        &mut init_rng,
    );
    let terms = objective_terms(cfg.method, cfg.lambda);
    let batcher = StratifiedBatcher::new(ds, Split::Train, cfg.batch_size, cfg.seed)?;
    let val = Gathered::new(ds, &ds.indices(Split::Validation));
    let single_label = val.y.iter().all(|&y| y == val.y[0]);

    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let mut scratch = net.scratch();
    let mut buf = Gathered::new(ds, &[]);
    let mut lr = cfg.learning_rate;
    let mut best_val_loss = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut train_loss = 0.0;
        let batches = batcher.epoch(epoch as u64);
        for (b, rows) in batches.iter().enumerate() {
            buf.fill(ds, rows);
            let loss = batch_objective(&net, buf.batch(), &terms, &mut scratch, Some(&mut grad));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            adam.step(&mut net.params, &grad, lr);
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            train_loss += loss * rows.len() as f64;
        }
        train_loss /= batches.iter().map(Vec::len).sum::<usize>() as f64;

        let val_loss = batch_objective(&net, val.batch(), &terms, &mut scratch, None);
        let d = net.input_dim();
        let val_f: Vec<f64> = val
            .x
            .chunks(d)
            .map(|x| net.forward(x, &mut scratch).0)
            .collect();
        let val_ap = average_precision(&val_f, &val.y);
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_average_precision: val_ap,
            learning_rate: lr,
        });
        // Without both labels AP is constant; rank by validation loss instead.
        let merit = if single_label { -val_loss } else { val_ap };
        if best.as_ref().is_none_or(|(m, _, _)| merit > *m) {
            best = Some((merit, epoch, net.params.clone()));
        }

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.lr_drop_patience {
                lr /= 10.0;
                bad_epochs = 0;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("epochs > 0");
    net.params = params;
    Ok(TrainOutcome {
        network: net,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_reference_values() {
        assert!((bce_loss(&[0.0], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let saturated = bce_loss(&[50.0], &[1]).unwrap();
        assert!(saturated.is_finite() && saturated <= 1e-20);
        // -ln σ(1) for both entries.
        let v = bce_loss(&[1.0, -1.0], &[1, 0]).unwrap();
        assert!((v - 0.313_261_687_518_222_8).abs() < 1e-12, "{v}");
        assert!(bce_loss(&[1e4, -1e4], &[0, 1]).unwrap().is_finite());
        assert!(matches!(bce_loss(&[0.0], &[1, 0]), Err(Error::Argument(_))));
    }

    #[test]
    fn layout_counts_params() {
        let l = Layout::new(3, &[4, 2], true);
        assert_eq!(l.n_params(), 3 * 4 + 4 + 4 * 2 + 2 + 3 + 3);
        assert_eq!(l.repr_dim(), 2);
    }

    #[test]
    fn hand_set_single_unit_network() {
        let mut net = Network::zeros(2, &[1], true);
        {
            let (w, b) = net.layer_mut(0);
            w.copy_from_slice(&[0.5, -1.0]);
            b[0] = 0.25;
        }
        net.set_head_f(&Head { weights: vec![2.0], bias: -0.5 });
        net.set_head_g(&Head { weights: vec![-3.0], bias: 1.0 }).unwrap();
        let mut scratch = net.scratch();
        let x = [1.5, 0.2];
        let h = (0.5 * 1.5 - 1.0 * 0.2 + 0.25f64).max(0.0);
        let (f, g) = net.forward(&x, &mut scratch);
        assert!((f - (2.0 * h - 0.5)).abs() < 1e-12);
        assert!((g.unwrap() - (-3.0 * h + 1.0)).abs() < 1e-12);

        // Negative pre-activation clamps to zero.
        let (f, _) = net.forward(&[-2.0, 1.0], &mut scratch);
        assert!((f + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_network_scores_zero() {
        let net = Network::zeros(3, &[4], false);
        let mut scratch = net.scratch();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0], &mut scratch), (0.0, None));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = TrainConfig {
            hidden_widths: vec![],
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation { field: "hidden_widths", .. })));
    }
}
