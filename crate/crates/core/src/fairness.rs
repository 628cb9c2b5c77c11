//! Demographic-parity metrics, relaxed regularizers, label massaging and the
//! two post-hoc routes to a fair decision rule: a weighted combination of two
//! heads and per-group thresholds.
//!
//! Every decision rule here is strict: a score is positive when it is
//! *greater* than its threshold.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::math::{linspace, sigmoid};
use crate::nn::Scores;

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::argument(format!("{what}: length {a} vs {b}")));
    }
    Ok(())
}

fn group_sizes(protected: &[u8]) -> Result<[usize; 2]> {
    let n1 = protected.iter().filter(|&&s| s == 1).count();
    let n0 = protected.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::UndefinedMetric(format!(
            "both protected groups required (n0={n0}, n1={n1})"
        )));
    }
    Ok([n0, n1])
}

/// Difference of positive rates computed from counts. All DDP values in the
/// crate go through this so comparisons against bounds are consistent.
#[inline]
pub fn ddp_from_counts(pos: [usize; 2], n: [usize; 2]) -> f64 {
    pos[1] as f64 / n[1] as f64 - pos[0] as f64 / n[0] as f64
}

/// Empirical `P(h=1|s=1) - P(h=1|s=0)`.
pub fn ddp(predictions: &[u8], protected: &[u8]) -> Result<f64> {
    check_lengths(predictions.len(), protected.len(), "ddp")?;
    let n = group_sizes(protected)?;
    let mut pos = [0usize; 2];
    for (&h, &s) in predictions.iter().zip(protected) {
        pos[s as usize] += h as usize;
    }
    Ok(ddp_from_counts(pos, n))
}

/// Sigmoid relaxations of the demographic disparity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `(mean_{s=1} σ(l) - mean_{s=0} σ(l))²`
    Squared,
    /// `|mean_{s=1} σ(l) - mean_{s=0} σ(l)|`, subgradient 0 at 0.
    Absolute,
}

fn mean_sigmoid_gap(logits: &[f64], protected: &[u8]) -> Result<(f64, [usize; 2])> {
    check_lengths(logits.len(), protected.len(), "regularizer")?;
    let n = group_sizes(protected)?;
    let mut sums = [0.0; 2];
    for (&l, &s) in logits.iter().zip(protected) {
        sums[s as usize] += sigmoid(l);
    }
    Ok((sums[1] / n[1] as f64 - sums[0] / n[0] as f64, n))
}

impl Regularizer {
    pub fn value(self, logits: &[f64], protected: &[u8]) -> Result<f64> {
        let (gap, _) = mean_sigmoid_gap(logits, protected)?;
        Ok(match self {
            Regularizer::Squared => gap * gap,
            Regularizer::Absolute => gap.abs(),
        })
    }

    /// Value and gradient with respect to each logit.
    pub fn value_and_grad(self, logits: &[f64], protected: &[u8]) -> Result<(f64, Vec<f64>)> {
        let (gap, n) = mean_sigmoid_gap(logits, protected)?;
        let (value, outer) = match self {
            Regularizer::Squared => (gap * gap, 2.0 * gap),
            Regularizer::Absolute => {
                let sign = if gap > 0.0 {
                    1.0
                } else if gap < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (gap.abs(), sign)
            }
        };
        let grad = logits
            .iter()
            .zip(protected)
            .map(|(&l, &s)| {
                let p = sigmoid(l);
                let side = if s == 1 { 1.0 / n[1] as f64 } else { -1.0 / n[0] as f64 };
                outer * p * (1.0 - p) * side
            })
            .collect();
        Ok((value, grad))
    }
}

pub fn reg_squared(logits: &[f64], protected: &[u8]) -> Result<f64> {
    Regularizer::Squared.value(logits, protected)
}

pub fn reg_abs(logits: &[f64], protected: &[u8]) -> Result<f64> {
    Regularizer::Absolute.value(logits, protected)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub ddp: f64,
    pub positive_rate_s0: f64,
    pub positive_rate_s1: f64,
    pub split: Split,
    pub n_per_group: [usize; 2],
}

/// Accuracy and disparity of binary predictions. Rates are ratios of exact
/// integer counts.
pub fn evaluate(predictions: &[u8], targets: &[u8], protected: &[u8], split: Split) -> Result<FairnessReport> {
    if predictions.is_empty() {
        return Err(Error::argument("cannot evaluate an empty prediction vector"));
    }
    check_lengths(predictions.len(), targets.len(), "evaluate targets")?;
    check_lengths(predictions.len(), protected.len(), "evaluate protected")?;
    let n = group_sizes(protected)?;
    let mut pos = [0usize; 2];
    let mut correct = 0usize;
    for ((&h, &y), &s) in predictions.iter().zip(targets).zip(protected) {
        pos[s as usize] += h as usize;
        correct += usize::from(h == y);
    }
    let positive_rate_s0 = pos[0] as f64 / n[0] as f64;
    let positive_rate_s1 = pos[1] as f64 / n[1] as f64;
    Ok(FairnessReport {
        accuracy: correct as f64 / predictions.len() as f64,
        ddp: positive_rate_s1 - positive_rate_s0,
        positive_rate_s0,
        positive_rate_s1,
        split,
        n_per_group: n,
    })
}

/// Record of a massaging pass over the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassagingPlan {
    /// Promote/demote pairs that equalize the train positive fractions.
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda_frac: f64,
    pub advantaged_group: u8,
    /// `round(lambda_frac · M)`, before any capping.
    pub requested: usize,
    /// True when fewer flippable rows existed than requested.
    pub capped: bool,
    /// Disadvantaged negatives flipped to 1, by descending score.
    pub promote_idx: Vec<usize>,
    /// Advantaged positives flipped to 0, by ascending score.
    pub demote_idx: Vec<usize>,
}

/// Relabels train rows toward equal positive fractions.
///
/// `scores` are an unconstrained classifier's train-split logits. The
/// advantaged group is the one with the higher train positive rate (group 1 on
/// ties).
pub fn massage(ds: &Dataset, scores: &Scores, lambda_frac: f64) -> Result<(Dataset, MassagingPlan)> {
    if !(0.0..=1.0).contains(&lambda_frac) {
        return Err(Error::argument(format!("lambda_frac {lambda_frac} outside [0, 1]")));
    }
    let train = ds.indices(Split::Train);
    if scores.split != Split::Train || scores.indices != train {
        return Err(Error::argument("massaging needs scores over the train split"));
    }
    let (y, s) = (ds.targets(), ds.protected());
    let mut n = [0usize; 2];
    let mut pos = [0usize; 2];
    for &i in &train {
        n[s[i] as usize] += 1;
        pos[s[i] as usize] += y[i] as usize;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::UndefinedMetric("train split lacks a protected group".into()));
    }
    // Compare pos1/n1 >= pos0/n0 without division.
    let adv = if pos[1] * n[0] >= pos[0] * n[1] { 1usize } else { 0 };
    let dis = 1 - adv;
    let excess = (pos[adv] * n[dis]) as f64 - (pos[dis] * n[adv]) as f64;
    let m = (excess / (n[0] + n[1]) as f64).round() as usize;
    let requested = (lambda_frac * m as f64).round() as usize;

    let mut promote: Vec<(f64, usize)> = Vec::new();
    let mut demote: Vec<(f64, usize)> = Vec::new();
    for (k, &i) in train.iter().enumerate() {
        if s[i] as usize == dis && y[i] == 0 {
            promote.push((scores.f[k], i));
        } else if s[i] as usize == adv && y[i] == 1 {
            demote.push((scores.f[k], i));
        }
    }
    promote.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    demote.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let flips = requested.min(promote.len()).min(demote.len());

    let promote_idx: Vec<usize> = promote[..flips].iter().map(|p| p.1).collect();
    let demote_idx: Vec<usize> = demote[..flips].iter().map(|p| p.1).collect();
    let mut targets = y.to_vec();
    for &i in &promote_idx {
        targets[i] = 1;
    }
    for &i in &demote_idx {
        targets[i] = 0;
    }
    let plan = MassagingPlan {
        m,
        lambda_frac,
        advantaged_group: adv as u8,
        requested,
        capped: flips < requested,
        promote_idx,
        demote_idx,
    };
    Ok((ds.with_targets(targets)?, plan))
}

/// Decision rule `1(f + a1·g + a2 > 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedClassifier {
    pub a1: f64,
    pub a2: f64,
    /// The `|DDP|` bound the coefficients were searched under.
    pub constraint: f64,
}

impl CombinedClassifier {
    pub fn decide(&self, f: f64, g: f64) -> u8 {
        u8::from(f + self.a1 * g + self.a2 > 0.0)
    }

    pub fn predict(&self, f: &[f64], g: &[f64]) -> Vec<u8> {
        f.iter().zip(g).map(|(&fi, &gi)| self.decide(fi, gi)).collect()
    }
}

/// Grid layout for [`combine_grid_search`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub half_width: f64,
    pub refinements: usize,
    /// Follow the grid with an exact sweep over every ordering of
    /// `f + a1·g` for `a1` in `[-half_width, half_width]`.
    pub exact_sweep: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 200,
            half_width: 15.0,
            refinements: 4,
            exact_sweep: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    correct: usize,
    abs_ddp: f64,
    a1: f64,
    a2: f64,
}

impl Candidate {
    /// `Less` means `self` is preferred.
    fn rank(&self, other: &Candidate) -> Ordering {
        other
            .correct
            .cmp(&self.correct)
            .then(self.abs_ddp.total_cmp(&other.abs_ddp))
            .then(self.a1.abs().total_cmp(&other.a1.abs()))
            .then(self.a2.abs().total_cmp(&other.a2.abs()))
    }
}

/// Every distinct decision set of `1(F + a2 > 0)` for `F = f + a1·g`: the
/// rows with `F <= -a2` form a prefix of the sorted values.
struct SortedCombination {
    values: Vec<f64>,
    cum_s1: Vec<usize>,
    cum_y1: Vec<usize>,
}

impl SortedCombination {
    fn new(f: &[f64], g: &[f64], s: &[u8], y: &[u8], a1: f64, order: &mut Vec<usize>) -> Self {
        let vals: Vec<f64> = f.iter().zip(g).map(|(fi, gi)| fi + a1 * gi).collect();
        order.clear();
        order.extend(0..f.len());
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let mut cum_s1 = Vec::with_capacity(f.len() + 1);
        let mut cum_y1 = Vec::with_capacity(f.len() + 1);
        cum_s1.push(0);
        cum_y1.push(0);
        for &i in order.iter() {
            cum_s1.push(cum_s1.last().unwrap() + s[i] as usize);
            cum_y1.push(cum_y1.last().unwrap() + y[i] as usize);
        }
        Self {
            values: order.iter().map(|&i| vals[i]).collect(),
            cum_s1,
            cum_y1,
        }
    }

    /// `a2` that puts exactly the `k` smallest values on the negative side,
    /// or `None` when a tie makes that cut impossible.
    fn offset_for_cut(&self, k: usize) -> Option<f64> {
        let v = &self.values;
        let n = v.len();
        if k == 0 {
            return Some(if v[0] > 0.0 { 0.0 } else { 1.0 - v[0] });
        }
        if k == n {
            return Some(if v[n - 1] <= 0.0 { 0.0 } else { -v[n - 1] });
        }
        let (lo, hi) = (v[k - 1], v[k]);
        if lo >= hi {
            return None;
        }
        if lo <= 0.0 && hi > 0.0 {
            return Some(0.0);
        }
        let mid = lo + (hi - lo) / 2.0;
        // Adjacent doubles: the midpoint may round onto `hi`.
        let mid = if mid < hi { mid } else { lo };
        Some(-mid)
    }

    /// `(correct, positives per group)` when the `k` smallest values are negative.
    fn counts(&self, k: usize, n: [usize; 2], y1_total: usize) -> (usize, [usize; 2]) {
        let s1_neg = self.cum_s1[k];
        let pos = [n[0] - (k - s1_neg), n[1] - s1_neg];
        let correct = y1_total + k - 2 * self.cum_y1[k];
        (correct, pos)
    }
}

/// Searches `(a1, a2)` for the most accurate rule `1(f + a1·g + a2 > 0)` with
/// `|DDP| <= ddp_bound` on the given (validation) rows.
///
/// `a1` runs over `points` equidistant values in `[-half_width, half_width]`,
/// re-gridded `refinements` times on the interval spanned by the incumbent's
/// grid neighbours. For each `a1` every distinct decision set in `a2` is
/// scored, so `a2` is exact rather than gridded. Ties prefer smaller `|DDP|`,
/// then smaller `|a1|`, then smaller `|a2|`.
pub fn combine_grid_search(
    f: &[f64],
    g: &[f64],
    protected: &[u8],
    targets: &[u8],
    ddp_bound: f64,
) -> Result<CombinedClassifier> {
    combine_grid_search_with(f, g, protected, targets, ddp_bound, GridSpec::default())
}

pub fn combine_grid_search_with(
    f: &[f64],
    g: &[f64],
    protected: &[u8],
    targets: &[u8],
    ddp_bound: f64,
    spec: GridSpec,
) -> Result<CombinedClassifier> {
    check_lengths(f.len(), g.len(), "grid search g")?;
    check_lengths(f.len(), protected.len(), "grid search protected")?;
    check_lengths(f.len(), targets.len(), "grid search targets")?;
    if !(ddp_bound >= 0.0) {
        return Err(Error::argument("ddp_bound must be nonnegative"));
    }
    if spec.points < 2 {
        return Err(Error::argument("grid needs at least two points per axis"));
    }
    if let Some(i) = f.iter().chain(g).position(|v| !v.is_finite()) {
        return Err(Error::validation("scores", format!("non-finite value at position {i}")));
    }
    let n = group_sizes(protected)?;
    let y1_total = targets.iter().filter(|&&y| y == 1).count();
    let mut order = Vec::with_capacity(f.len());

    let mut best: Option<Candidate> = None;
    let mut a1_axis = linspace(-spec.half_width, spec.half_width, spec.points);
    for level in 0..=spec.refinements {
        for &a1 in &a1_axis {
            let sorted = SortedCombination::new(f, g, protected, targets, a1, &mut order);
            for k in 0..=f.len() {
                let (correct, pos) = sorted.counts(k, n, y1_total);
                let abs_ddp = ddp_from_counts(pos, n).abs();
                if abs_ddp > ddp_bound {
                    continue;
                }
                let Some(a2) = sorted.offset_for_cut(k) else {
                    continue;
                };
                let cand = Candidate { correct, abs_ddp, a1, a2 };
                if best.as_ref().is_none_or(|b| cand.rank(b) == Ordering::Less) {
                    best = Some(cand);
                }
            }
        }
        let Some(inc) = best else {
            return Err(Error::Infeasible { bound: ddp_bound });
        };
        if level < spec.refinements {
            let h1 = a1_axis[1] - a1_axis[0];
            a1_axis = linspace(inc.a1 - h1, inc.a1 + h1, spec.points);
        }
    }
    let mut best = best.expect("checked after first level");
    if spec.exact_sweep {
        let rows = Rows { f, g, s: protected, y: targets, n, y1_total };
        if let Some(c) = exact_sweep(&rows, ddp_bound, -spec.half_width, spec.half_width) {
            if c.rank(&best) == Ordering::Less {
                best = c;
            }
        }
    }
    Ok(CombinedClassifier {
        a1: best.a1,
        a2: best.a2,
        constraint: ddp_bound,
    })
}

struct Rows<'a> {
    f: &'a [f64],
    g: &'a [f64],
    s: &'a [u8],
    y: &'a [u8],
    n: [usize; 2],
    y1_total: usize,
}

impl Rows<'_> {
    fn value(&self, i: usize, a1: f64) -> f64 {
        self.f[i] + a1 * self.g[i]
    }

    /// Direct evaluation of `1(f + a1·g + a2 > 0)`.
    fn evaluate(&self, a1: f64, a2: f64) -> Candidate {
        let mut correct = 0;
        let mut pos = [0usize; 2];
        for i in 0..self.f.len() {
            let d = u8::from(self.value(i, a1) + a2 > 0.0);
            correct += usize::from(d == self.y[i]);
            pos[self.s[i] as usize] += d as usize;
        }
        Candidate {
            correct,
            abs_ddp: ddp_from_counts(pos, self.n).abs(),
            a1,
            a2,
        }
    }
}

#[derive(PartialEq)]
struct Crossing {
    at: f64,
    position: usize,
}

impl Eq for Crossing {}

impl PartialOrd for Crossing {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Crossing {
    // Reversed so the max-heap pops the earliest crossing first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then(other.position.cmp(&self.position))
    }
}

/// Kinetic sweep of `a1` over `[lo, hi]`.
///
/// The order of `f + a1·g` only changes where two adjacent lines cross, and a
/// swap at positions `(p, p + 1)` changes the composition of a single prefix.
/// Each prefix that changes is scored at the midpoint of the interval before
/// the next crossing; candidates that would beat the incumbent are confirmed
/// by direct evaluation.
fn exact_sweep(rows: &Rows<'_>, ddp_bound: f64, lo: f64, hi: f64) -> Option<Candidate> {
    let n = rows.f.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        rows.value(i, lo)
            .total_cmp(&rows.value(j, lo))
            .then(rows.g[i].total_cmp(&rows.g[j]))
            .then(i.cmp(&j))
    });
    let mut cum_s1 = vec![0usize; n + 1];
    let mut cum_y1 = vec![0usize; n + 1];
    for (p, &i) in order.iter().enumerate() {
        cum_s1[p + 1] = cum_s1[p] + rows.s[i] as usize;
        cum_y1[p + 1] = cum_y1[p] + rows.y[i] as usize;
    }

    let crossing = |order: &[usize], p: usize, now: f64| -> Option<Crossing> {
        let (i, j) = (order[p], order[p + 1]);
        let slope = rows.g[i] - rows.g[j];
        if slope <= 0.0 {
            return None;
        }
        let at = ((rows.f[j] - rows.f[i]) / slope).max(now);
        (at < hi).then_some(Crossing { at, position: p })
    };
    let mut heap = std::collections::BinaryHeap::new();
    for p in 0..n.saturating_sub(1) {
        heap.extend(crossing(&order, p, lo));
    }

    let mut best: Option<Candidate> = None;
    let mut consider = |k: usize, a1: f64, order: &[usize], cum_s1: &[usize], cum_y1: &[usize]| {
        let s1_neg = cum_s1[k];
        let pos = [rows.n[0] - (k - s1_neg), rows.n[1] - s1_neg];
        let abs_ddp = ddp_from_counts(pos, rows.n).abs();
        if abs_ddp > ddp_bound {
            return;
        }
        let correct = rows.y1_total + k - 2 * cum_y1[k];
        let a2 = match (k.checked_sub(1).map(|p| rows.value(order[p], a1)), order.get(k).map(|&i| rows.value(i, a1))) {
            (None, Some(h)) => if h > 0.0 { 0.0 } else { 1.0 - h },
            (Some(l), None) => if l <= 0.0 { 0.0 } else { -l },
            (Some(l), Some(h)) if l < h => {
                if l <= 0.0 && h > 0.0 {
                    0.0
                } else {
                    let mid = l + (h - l) / 2.0;
                    -(if mid < h { mid } else { l })
                }
            }
            _ => return,
        };
        let claimed = Candidate { correct, abs_ddp, a1, a2 };
        if best.as_ref().is_some_and(|b| claimed.rank(b) != Ordering::Less) {
            return;
        }
        let actual = rows.evaluate(a1, a2);
        if actual.abs_ddp <= ddp_bound && best.as_ref().is_none_or(|b| actual.rank(b) == Ordering::Less) {
            best = Some(actual);
        }
    };

    let next_at = |heap: &std::collections::BinaryHeap<Crossing>| heap.peek().map_or(hi, |c| c.at);
    let first = lo + (next_at(&heap) - lo) / 2.0;
    for k in 0..=n {
        consider(k, first, &order, &cum_s1, &cum_y1);
    }
    let mut dirty: Vec<usize> = Vec::new();
    while let Some(ev) = heap.pop() {
        let p = ev.position;
        // Stale entry: the pair at `p` changed since it was queued.
        match crossing(&order, p, ev.at) {
            Some(c) if c.at == ev.at => {}
            _ => continue,
        }
        order.swap(p, p + 1);
        cum_s1[p + 1] = cum_s1[p] + rows.s[order[p]] as usize;
        cum_y1[p + 1] = cum_y1[p] + rows.y[order[p]] as usize;
        dirty.push(p + 1);
        if p > 0 {
            heap.extend(crossing(&order, p - 1, ev.at));
        }
        if p + 2 < n {
            heap.extend(crossing(&order, p + 1, ev.at));
        }
        let upcoming = next_at(&heap);
        if upcoming > ev.at {
            let a1 = ev.at + (upcoming - ev.at) / 2.0;
            for k in dirty.drain(..) {
                consider(k, a1, &order, &cum_s1, &cum_y1);
            }
        }
    }
    best
}

/// Per-group thresholds: decide `1(f > t_s)` using the true attribute `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    #[serde(with = "extended_f64")]
    pub t0: f64,
    #[serde(with = "extended_f64")]
    pub t1: f64,
}

impl GroupThresholds {
    pub fn decide(&self, f: f64, s: u8) -> u8 {
        let t = if s == 1 { self.t1 } else { self.t0 };
        u8::from(f > t)
    }

    pub fn predict(&self, f: &[f64], protected: &[u8]) -> Vec<u8> {
        f.iter().zip(protected).map(|(&fi, &s)| self.decide(fi, s)).collect()
    }
}

/// JSON has no infinities; encode them as the strings "inf" / "-inf".
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            ser.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            ser.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad float `{s}`"))),
        }
    }
}

/// Candidate thresholds of one group with their positive and correct counts.
struct GroupCurve {
    thresholds: Vec<f64>,
    positives: Vec<usize>,
    correct: Vec<usize>,
}

impl GroupCurve {
    fn new(scores: &[(f64, u8)]) -> Self {
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = sorted.len();
        let y1_total = sorted.iter().filter(|p| p.1 == 1).count();
        // -inf: everything positive.
        let mut thresholds = vec![f64::NEG_INFINITY];
        let mut positives = vec![n];
        let mut correct = vec![y1_total];
        let mut k = 0;
        let mut y1_below = 0;
        while k < n {
            let v = sorted[k].0;
            while k < n && sorted[k].0 == v {
                y1_below += sorted[k].1 as usize;
                k += 1;
            }
            let t = if k < n { 0.5 * (v + sorted[k].0) } else { f64::INFINITY };
            thresholds.push(t);
            positives.push(n - k);
            // negatives predicted for the k lowest, positives above.
            correct.push((k - y1_below) + (y1_total - y1_below));
        }
        if n == 0 {
            thresholds.push(f64::INFINITY);
            positives.push(0);
            correct.push(0);
        }
        Self {
            thresholds,
            positives,
            correct,
        }
    }
}

fn threshold_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Accuracy-optimal per-group thresholds subject to `|DDP| <= ddp_bound`,
/// by exhaustive enumeration of candidate pairs (midpoints between
/// consecutive distinct scores of each group, plus `±inf`).
///
/// Ties prefer smaller `|DDP|`, then closer thresholds, then lower thresholds.
pub fn lipton_thresholds(
    f: &[f64],
    protected: &[u8],
    targets: &[u8],
    ddp_bound: f64,
) -> Result<GroupThresholds> {
    check_lengths(f.len(), protected.len(), "thresholds protected")?;
    check_lengths(f.len(), targets.len(), "thresholds targets")?;
    if !(ddp_bound >= 0.0) {
        return Err(Error::argument("ddp_bound must be nonnegative"));
    }
    let n = group_sizes(protected)?;
    let split = |group: u8| -> Vec<(f64, u8)> {
        f.iter()
            .zip(protected)
            .zip(targets)
            .filter(|((_, &s), _)| s == group)
            .map(|((&v, _), &y)| (v, y))
            .collect()
    };
    let c0 = GroupCurve::new(&split(0));
    let c1 = GroupCurve::new(&split(1));

    let mut best: Option<(usize, f64, f64, usize, usize)> = None;
    for i in 0..c0.thresholds.len() {
        for j in 0..c1.thresholds.len() {
            let abs_ddp = ddp_from_counts([c0.positives[i], c1.positives[j]], n).abs();
            if abs_ddp > ddp_bound {
                continue;
            }
            let correct = c0.correct[i] + c1.correct[j];
            let gap = threshold_gap(c0.thresholds[i], c1.thresholds[j]);
            let better = match best {
                None => true,
                Some((bc, bd, bg, _, _)) => correct
                    .cmp(&bc)
                    .reverse()
                    .then(abs_ddp.total_cmp(&bd))
                    .then(gap.total_cmp(&bg))
                    .is_lt(),
            };
            if better {
                best = Some((correct, abs_ddp, gap, i, j));
            }
        }
    }
    // Constant classifiers (±inf on both sides) always give DDP = 0.
    let (_, _, _, i, j) = best.expect("constant pair is always feasible");
    Ok(GroupThresholds {
        t0: c0.thresholds[i],
        t1: c1.thresholds[j],
    })
}

/// `count` bounds from 0 to `|unconstrained_ddp|`, both ends included.
pub fn equidistant_bounds(unconstrained_ddp: f64, count: usize) -> Vec<f64> {
    linspace(0.0, unconstrained_ddp.abs(), count)
}
