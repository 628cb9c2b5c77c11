//! Evidence of disparate treatment in fair classifiers.
//!
//! - Awareness: how well a linear probe recovers `s` from a model's frozen
//!   last layer, and whether that rises with the fairness weight.
//! - Reconstruction: a fair model's decisions as `1(f + a1·g + a2 > 0)` from a
//!   two-head model, and an unconstrained model's as `1(r - b1·g - b2 > 0)`.
//! - Counterfactuals: decisions that change when `g(x)` is swapped for the
//!   other group's median.
//! - The score region where the inferred group decides the outcome.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fairness::{extended_f64, CombinedClassifier};
use crate::nn::{train, Network, Scores, TrainConfig};
use crate::stats::{kendall_tau, logistic_fit, median, KendallResult, DEFAULT_RIDGE};

fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Fits a logistic probe on `(x_train, s_train)` and returns its accuracy on
/// the held-out rows.
pub fn linear_probe(x_train: &DMatrix<f64>, s_train: &[u8], x_test: &DMatrix<f64>, s_test: &[u8]) -> Result<f64> {
    let fit = logistic_fit(x_train, s_train, None, DEFAULT_RIDGE)?;
    Ok(accuracy(&fit.predict(x_test, None), s_test))
}

/// Probe accuracy for `s` on a network's last layer: fit on train, score on test.
pub fn probe_accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let z_train = net.last_layer(ds, Split::Train)?;
    let z_test = net.last_layer(ds, Split::Test)?;
    linear_probe(
        &z_train,
        &ds.protected_of(Split::Train),
        &z_test,
        &ds.protected_of(Split::Test),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AwarenessCurve {
    pub lambdas: Vec<f64>,
    pub probe_accuracies: Vec<f64>,
    /// Test accuracy of `1(f > 0)` for each model.
    pub target_accuracies: Vec<f64>,
    pub kept_mask: Vec<bool>,
    /// `(constant-classifier accuracy, unconstrained accuracy)` spanning the filter interval.
    pub filter_interval: (f64, f64),
    pub kendall: KendallResult,
}

/// Target accuracy below which a model counts as collapsed: the top of the
/// lowest quartile between the constant and the unconstrained classifier.
pub fn quartile_cutoff(constant_accuracy: f64, unconstrained_accuracy: f64) -> f64 {
    constant_accuracy + 0.25 * (unconstrained_accuracy - constant_accuracy)
}

/// Measures protected-attribute awareness across a fairness sweep.
///
/// `models` pairs each fairness weight with its network. The unconstrained
/// reference is the model with the smallest weight (normally 0).
pub fn probe_awareness(models: &[(f64, &Network)], ds: &Dataset) -> Result<AwarenessCurve> {
    if models.is_empty() {
        return Err(Error::InsufficientData("no models to probe".into()));
    }
    let y_test = ds.targets_of(Split::Test);
    let base_rate = y_test.iter().filter(|&&y| y == 1).count() as f64 / y_test.len() as f64;
    let constant = base_rate.max(1.0 - base_rate);

    let mut probe_accuracies = Vec::with_capacity(models.len());
    let mut target_accuracies = Vec::with_capacity(models.len());
    for (_, net) in models {
        probe_accuracies.push(probe_accuracy(net, ds)?);
        target_accuracies.push(accuracy(&net.score(ds, Split::Test)?.decisions(), &y_test));
    }
    let reference = models
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .expect("nonempty");
    let unconstrained = target_accuracies[reference];
    let cutoff = quartile_cutoff(constant, unconstrained);
    let kept_mask: Vec<bool> = target_accuracies.iter().map(|&a| a >= cutoff).collect();

    let lambdas: Vec<f64> = models.iter().map(|m| m.0).collect();
    let (kx, ky): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(&probe_accuracies)
        .zip(&kept_mask)
        .filter(|(_, &k)| k)
        .map(|((&l, &p), _)| (l, p))
        .unzip();
    if kx.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} of {} models survive the quartile filter; need 3",
            kx.len(),
            models.len()
        )));
    }
    let kendall = kendall_tau(&kx, &ky)?;
    Ok(AwarenessCurve {
        lambdas,
        probe_accuracies,
        target_accuracies,
        kept_mask,
        filter_interval: (constant, unconstrained),
        kendall,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Fair decisions from `1(f + a1·g + a2 > 0)`.
    FairFromHeads,
    /// Unconstrained decisions from `1(r - b1·g - b2 > 0)`.
    UnconstrainedFromFair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRoute {
    /// Offset coefficient pinned to 1.
    Pinned,
    /// Free offset weight, divided out afterwards.
    FreeNormalized,
    /// Target was constant; coefficients are infinite sentinels.
    Degenerate,
    /// Neither fit beat always predicting the majority decision, which the
    /// family reaches as `a2 -> ±∞`; coefficients are infinite sentinels.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub direction: Direction,
    /// `(a1, a2)` or `(b1, b2)` depending on `direction`.
    #[serde(with = "coefficient_pair")]
    pub coefficients: (f64, f64),
    /// Decision agreement on the evaluation rows.
    pub agreement: f64,
    /// Decision agreement on the rows used for fitting.
    pub fit_agreement: f64,
    /// Mean pairwise agreement among reseeded reference models, when known.
    pub baseline_agreement: Option<f64>,
    pub route: FitRoute,
    pub converged: bool,
}

mod coefficient_pair {
    use super::extended_f64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Pair(#[serde(with = "extended_f64")] f64, #[serde(with = "extended_f64")] f64);

    pub fn serialize<S: Serializer>(v: &(f64, f64), ser: S) -> Result<S::Ok, S::Error> {
        Pair(v.0, v.1).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<(f64, f64), D::Error> {
        let Pair(a, b) = Pair::deserialize(de)?;
        Ok((a, b))
    }
}

impl ReconstructionResult {
    /// Coefficients of the equivalent rule `1(score + a1·g + a2 > 0)`, where
    /// `score` is `f` or `r` depending on the direction.
    pub fn as_combination(&self) -> (f64, f64) {
        match self.direction {
            Direction::FairFromHeads => self.coefficients,
            Direction::UnconstrainedFromFair => (-self.coefficients.0, -self.coefficients.1),
        }
    }

    pub fn decide(&self, score: f64, g: f64) -> u8 {
        let (a1, a2) = self.as_combination();
        match self.route {
            FitRoute::Degenerate | FitRoute::Constant => u8::from(a2 > 0.0),
            _ => u8::from(score + a1 * g + a2 > 0.0),
        }
    }

    pub fn predict(&self, score: &[f64], g: &[f64]) -> Vec<u8> {
        score.iter().zip(g).map(|(&s, &gi)| self.decide(s, gi)).collect()
    }

    pub fn with_baseline(mut self, baseline_agreement: f64) -> Self {
        self.baseline_agreement = Some(baseline_agreement);
        self
    }
}

/// Rows used to fit or evaluate a reconstruction: the offset score, the
/// group-head output and the decisions to mimic.
#[derive(Clone, Copy, Debug)]
pub struct RuleData<'a> {
    pub score: &'a [f64],
    pub g: &'a [f64],
    pub target: &'a [u8],
}

impl RuleData<'_> {
    fn check(&self) -> Result<()> {
        if self.score.len() != self.g.len() || self.score.len() != self.target.len() {
            return Err(Error::argument("score, g and target lengths differ"));
        }
        if self.score.is_empty() {
            return Err(Error::argument("no rows"));
        }
        Ok(())
    }
}

fn rule_agreement(data: RuleData<'_>, c: f64, d: f64) -> f64 {
    let hits = (0..data.score.len())
        .filter(|&i| u8::from(data.score[i] + c * data.g[i] + d > 0.0) == data.target[i])
        .count();
    hits as f64 / data.score.len() as f64
}

/// Fits `1(score + c·g + d > 0)` to `target`; returns `(c, d, route, converged)`.
///
/// Two logistic fits are tried: `score` as a fixed unit offset, and a free
/// coefficient on `score` divided out afterwards. The one that agrees better
/// with `target` on the fit rows wins; ties keep the offset fit. A constant
/// rule replaces both when it agrees strictly better still.
fn fit_offset_rule(data: RuleData<'_>) -> Result<(f64, f64, FitRoute, bool)> {
    let n = data.score.len();
    let x = DMatrix::from_column_slice(n, 1, data.g);
    let pinned = logistic_fit(&x, data.target, Some(data.score), DEFAULT_RIDGE)?;
    let mut best = (pinned.weights[0], pinned.intercept, FitRoute::Pinned, pinned.converged);
    let mut best_agreement = rule_agreement(data, best.0, best.1);
    let mut both = DMatrix::zeros(n, 2);
    both.column_mut(0).copy_from_slice(data.score);
    both.column_mut(1).copy_from_slice(data.g);
    let free = logistic_fit(&both, data.target, None, DEFAULT_RIDGE)?;
    let w = free.weights[0];
    if w > 0.0 && w.is_finite() {
        let (fc, fd) = (free.weights[1] / w, free.intercept / w);
        if fc.is_finite() && fd.is_finite() {
            let agreement = rule_agreement(data, fc, fd);
            if agreement > best_agreement {
                best = (fc, fd, FitRoute::FreeNormalized, free.converged);
                best_agreement = agreement;
            }
        }
    }
    let ones = data.target.iter().filter(|&&t| t == 1).count();
    let majority = ones.max(n - ones) as f64 / n as f64;
    if majority > best_agreement {
        let d = if 2 * ones > n { f64::INFINITY } else { f64::NEG_INFINITY };
        best = (0.0, d, FitRoute::Constant, true);
    }
    Ok(best)
}

fn reconstruct(direction: Direction, fit: RuleData<'_>, eval: RuleData<'_>) -> Result<ReconstructionResult> {
    fit.check()?;
    eval.check()?;
    let ones = fit.target.iter().filter(|&&t| t == 1).count();
    if ones == 0 || ones == fit.target.len() {
        let constant = u8::from(ones > 0);
        let a2 = if constant == 1 { f64::INFINITY } else { f64::NEG_INFINITY };
        let coefficients = match direction {
            Direction::FairFromHeads => (0.0, a2),
            Direction::UnconstrainedFromFair => (0.0, -a2),
        };
        let agree = |t: &[u8]| t.iter().filter(|&&v| v == constant).count() as f64 / t.len() as f64;
        return Ok(ReconstructionResult {
            direction,
            coefficients,
            agreement: agree(eval.target),
            fit_agreement: 1.0,
            baseline_agreement: None,
            route: FitRoute::Degenerate,
            converged: true,
        });
    }
    let (c, d, route, converged) = fit_offset_rule(fit)?;
    let coefficients = match direction {
        Direction::FairFromHeads => (c, d),
        Direction::UnconstrainedFromFair => (-c, -d),
    };
    let mut result = ReconstructionResult {
        direction,
        coefficients,
        agreement: 0.0,
        fit_agreement: 0.0,
        baseline_agreement: None,
        route,
        converged,
    };
    result.fit_agreement = accuracy(&result.predict(fit.score, fit.g), fit.target);
    result.agreement = accuracy(&result.predict(eval.score, eval.g), eval.target);
    Ok(result)
}

/// Finds `(a1, a2)` so that `1(f + a1·g + a2 > 0)` mimics a fair model's
/// decisions. Fit on `fit_*` rows (validation), agreement on `eval_*` rows (test).
pub fn reconstruct_fair(fit: &Scores, fit_decisions: &[u8], eval: &Scores, eval_decisions: &[u8]) -> Result<ReconstructionResult> {
    reconstruct(
        Direction::FairFromHeads,
        RuleData {
            score: &fit.f,
            g: fit.require_g()?,
            target: fit_decisions,
        },
        RuleData {
            score: &eval.f,
            g: eval.require_g()?,
            target: eval_decisions,
        },
    )
}

/// Finds `(b1, b2)` so that `1(r - b1·g - b2 > 0)` mimics unconstrained
/// decisions, with `r` the fair model's logits and `g` a group head.
pub fn recover_unconstrained(fit: RuleData<'_>, eval: RuleData<'_>) -> Result<ReconstructionResult> {
    reconstruct(Direction::UnconstrainedFromFair, fit, eval)
}

/// Mean pairwise fraction of differing decisions.
pub fn pairwise_disagreement(decisions: &[Vec<u8>]) -> Result<f64> {
    if decisions.len() < 2 {
        return Err(Error::argument("need at least two decision vectors"));
    }
    let n = decisions[0].len();
    if n == 0 || decisions.iter().any(|d| d.len() != n) {
        return Err(Error::argument("decision vectors must be nonempty and equally long"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..decisions.len() {
        for j in i + 1..decisions.len() {
            let diff = decisions[i].iter().zip(&decisions[j]).filter(|(a, b)| a != b).count();
            total += diff as f64 / n as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Trains one model per seed and returns the mean pairwise test-decision
/// disagreement.
pub fn reseed_baseline_with_seeds(ds: &Dataset, cfg: &TrainConfig, seeds: &[u64]) -> Result<f64> {
    if seeds.len() < 2 {
        return Err(Error::argument("reseed baseline needs at least two seeds"));
    }
    let decisions = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            Ok(train(ds, &cfg)?.score(ds, Split::Test)?.decisions())
        })
        .collect::<Result<Vec<_>>>()?;
    pairwise_disagreement(&decisions)
}

/// [`reseed_baseline_with_seeds`] with seeds `cfg.seed .. cfg.seed + n_seeds`.
pub fn reseed_baseline(ds: &Dataset, cfg: &TrainConfig, n_seeds: usize) -> Result<f64> {
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    reseed_baseline_with_seeds(ds, cfg, &seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub flip_fraction_total: f64,
    /// Per group `s`: share of the group whose decision goes 0 -> 1.
    pub flips_0to1_group: [f64; 2],
    pub flips_1to0_group: [f64; 2],
    /// Raw counts behind the fractions.
    pub flips_0to1_count: [usize; 2],
    pub flips_1to0_count: [usize; 2],
    pub n_per_group: [usize; 2],
    /// Lower medians of `g` per group.
    pub medians: (f64, f64),
}

/// Swaps each `g(x)` for the median `g` of the other group and counts
/// decision changes under `1(f + a1·g + a2 > 0)`.
pub fn counterfactual_flips(
    f: &[f64],
    g: &[f64],
    protected: &[u8],
    classifier: &CombinedClassifier,
) -> Result<CounterfactualReport> {
    if f.len() != g.len() || f.len() != protected.len() {
        return Err(Error::argument("f, g and protected lengths differ"));
    }
    let by_group = |grp: u8| -> Vec<f64> {
        g.iter()
            .zip(protected)
            .filter(|(_, &s)| s == grp)
            .map(|(&v, _)| v)
            .collect()
    };
    let (g0, g1) = (by_group(0), by_group(1));
    if g0.is_empty() || g1.is_empty() {
        return Err(Error::UndefinedMetric("both protected groups required".into()));
    }
    let medians = [median(&g0)?, median(&g1)?];
    let mut up = [0usize; 2];
    let mut down = [0usize; 2];
    for i in 0..f.len() {
        let s = protected[i] as usize;
        let before = classifier.decide(f[i], g[i]);
        let after = classifier.decide(f[i], medians[1 - s]);
        match (before, after) {
            (0, 1) => up[s] += 1,
            (1, 0) => down[s] += 1,
            _ => {}
        }
    }
    let n = [g0.len(), g1.len()];
    let frac = |c: [usize; 2]| [c[0] as f64 / n[0] as f64, c[1] as f64 / n[1] as f64];
    Ok(CounterfactualReport {
        flip_fraction_total: (up[0] + up[1] + down[0] + down[1]) as f64 / f.len() as f64,
        flips_0to1_group: frac(up),
        flips_1to0_group: frac(down),
        flips_0to1_count: up,
        flips_1to0_count: down,
        n_per_group: n,
        medians: (medians[0], medians[1]),
    })
}

/// Share of `g` outputs within 0.1 of 0 or 1.
pub fn near_binary_fraction(g: &[f64]) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    g.iter().filter(|&&v| v.abs() <= 0.1 || (v - 1.0).abs() <= 0.1).count() as f64 / g.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    /// Positions (into the supplied score vectors) whose decision differs between `g = 0` and `g = 1`.
    pub indices: Vec<usize>,
    pub near_binary_fraction: f64,
}

/// Positions where `1(score + a1·g + a2 > 0)` differs between `g = 0` and
/// `g = 1`: the half-open score interval between `-a2 - a1` and `-a2`.
pub fn region_indices(score: &[f64], a1: f64, a2: f64) -> Vec<usize> {
    if a1 == 0.0 {
        return Vec::new();
    }
    score
        .iter()
        .enumerate()
        .filter(|(_, &v)| (v + a2 > 0.0) != (v + a1 + a2 > 0.0))
        .map(|(i, _)| i)
        .collect()
}

/// Individuals whose recovered decision hinges on the inferred group.
pub fn disadvantaged_region(score: &[f64], g: &[f64], recovery: &ReconstructionResult) -> Result<RegionReport> {
    if score.len() != g.len() {
        return Err(Error::argument("score and g lengths differ"));
    }
    let indices = match recovery.route {
        FitRoute::Degenerate | FitRoute::Constant => Vec::new(),
        _ => {
            let (a1, a2) = recovery.as_combination();
            region_indices(score, a1, a2)
        }
    };
    Ok(RegionReport {
        indices,
        near_binary_fraction: near_binary_fraction(g),
    })
}

/// One audit section: its value, or the error that prevented it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Section<T> {
    Value(T),
    Failed { error: ErrorEntry },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub kind: String,
    pub message: String,
}

impl<T> From<Result<T>> for Section<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Section::Value(v),
            Err(e) => Section::Failed {
                error: ErrorEntry {
                    kind: e.kind().into(),
                    message: e.to_string(),
                },
            },
        }
    }
}

impl<T> Section<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Section::Value(v) => Some(v),
            Section::Failed { .. } => None,
        }
    }
}
