//! Statistical primitives: a Newton logistic-regression solver with an
//! optional fixed offset, Kendall's tau-b with a two-sided p-value, the lower
//! median, and average precision.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_sf, sigmoid, softplus};

pub const DEFAULT_RIDGE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub offset_used: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean norm of the gradient of the mean penalized loss at the solution.
    pub gradient_norm: f64,
}

impl LogisticFit {
    /// Linear predictor `x·w + b` (without any offset).
    pub fn linear(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    /// `1(x·w + b + offset > 0)` for every row.
    pub fn predict(&self, x: &DMatrix<f64>, offset: Option<&[f64]>) -> Vec<u8> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                let o = offset.map_or(0.0, |o| o[i]);
                u8::from(self.linear(&row) + o > 0.0)
            })
            .collect()
    }
}

/// Mean negative log-likelihood plus `ridge/2 · |w|²` (intercept unpenalized).
fn penalized_loss(eta: &DVector<f64>, y: &[u8], w: &[f64], ridge: f64) -> f64 {
    let n = y.len() as f64;
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - yi as f64 * e)
        .sum();
    nll / n + 0.5 * ridge * w.iter().map(|v| v * v).sum::<f64>()
}

/// Maximizes the ridge-penalized likelihood of `σ(Xw + b + offset)` by
/// damped Newton iterations from zero.
///
/// The returned fit has `converged = false` if the gradient did not fall
/// below tolerance within 200 iterations.
pub fn logistic_fit(x: &DMatrix<f64>, y: &[u8], offset: Option<&[f64]>, ridge: f64) -> Result<LogisticFit> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::argument(format!("{n} rows vs {} labels", y.len())));
    }
    if n < k + 1 {
        return Err(Error::argument(format!("need at least {} rows, got {n}", k + 1)));
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::argument("offset length differs from row count"));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("offset contains non-finite values"));
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("design matrix contains non-finite values"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::argument("ridge must be nonnegative"));
    }

    let p = k + 1;
    let mut design = DMatrix::zeros(n, p);
    design.view_mut((0, 0), (n, k)).copy_from(x);
    design.column_mut(k).fill(1.0);
    let offset_vec = DVector::from_iterator(n, (0..n).map(|i| offset.map_or(0.0, |o| o[i])));
    let yv = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    let inv_n = 1.0 / n as f64;

    let mut beta = DVector::zeros(p);
    let mut eta = &design * &beta + &offset_vec;
    let mut loss = penalized_loss(&eta, y, &beta.as_slice()[..k], ridge);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while iterations < MAX_ITERATIONS {
        let prob = eta.map(sigmoid);
        let mut grad = design.tr_mul(&(&prob - &yv)) * inv_n;
        for j in 0..k {
            grad[j] += ridge * beta[j];
        }
        grad_norm = grad.norm();
        if grad_norm <= GRADIENT_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let weights = prob.map(|q| q * (1.0 - q) * inv_n);
        let mut weighted = design.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(weights.iter()) {
            row *= *w;
        }
        let mut hess = design.tr_mul(&weighted);
        for j in 0..k {
            hess[(j, j)] += ridge;
        }
        let step = solve_spd(hess, &grad);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &beta - &step * t;
            let cand_eta = &design * &candidate + &offset_vec;
            let cand_loss = penalized_loss(&cand_eta, y, &candidate.as_slice()[..k], ridge);
            if cand_loss <= loss {
                beta = candidate;
                eta = cand_eta;
                accepted = loss - cand_loss > 0.0 || t == 1.0;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // At the floating-point floor: no step decreases the loss.
            let prob = eta.map(sigmoid);
            let mut grad = design.tr_mul(&(&prob - &yv)) * inv_n;
            for j in 0..k {
                grad[j] += ridge * beta[j];
            }
            grad_norm = grad.norm();
            converged = grad_norm <= 1e-8;
            break;
        }
    }

    Ok(LogisticFit {
        weights: beta.as_slice()[..k].to_vec(),
        intercept: beta[k],
        offset_used: offset.is_some(),
        converged,
        iterations,
        gradient_norm: grad_norm,
    })
}

/// Solves `H s = g`, adding diagonal jitter until the Cholesky factorization succeeds.
fn solve_spd(hess: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let mut jitter = 0.0;
    loop {
        let mut h = hess.clone();
        if jitter > 0.0 {
            for j in 0..h.nrows() {
                h[(j, j)] += jitter;
            }
        }
        if let Some(chol) = h.cholesky() {
            return chol.solve(grad);
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KendallResult {
    pub tau: f64,
    pub p_value: f64,
    pub n_pairs: usize,
    pub method: PValueMethod,
}

/// Largest sample size for which the p-value is computed by enumerating all
/// permutations.
pub const EXACT_P_MAX_N: usize = 10;

/// `S = concordant - discordant` over all pairs.
fn kendall_s(xs: &[f64], ys: &[f64]) -> i64 {
    let n = xs.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i].total_cmp(&xs[j]) as i64;
            let dy = ys[i].total_cmp(&ys[j]) as i64;
            s += dx * dy;
        }
    }
    s
}

/// Sizes of runs of equal values.
fn tie_groups(values: &[f64]) -> Vec<u64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push((j - i) as u64);
        }
        i = j;
    }
    out
}

/// Kendall's tau-b with a two-sided p-value against independence.
///
/// For `n <= 10` the p-value is exact: the share of all `n!` reorderings of
/// `ys` whose `|S|` reaches the observed one. Larger samples use the normal
/// approximation with the tie-corrected variance of `S`.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<KendallResult> {
    if xs.len() != ys.len() {
        return Err(Error::argument(format!("{} vs {} values", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::argument("kendall tau needs at least 3 observations"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::argument("non-finite observation"));
    }
    let n_pairs = n * (n - 1) / 2;
    let tx = tie_groups(xs);
    let ty = tie_groups(ys);
    let pairs_tied = |t: &[u64]| t.iter().map(|&t| t * (t - 1) / 2).sum::<u64>() as f64;
    let n0 = n_pairs as f64;
    let (n1, n2) = (pairs_tied(&tx), pairs_tied(&ty));
    if n1 == n0 || n2 == n0 {
        return Err(Error::UndefinedCorrelation("an input is constant".into()));
    }
    let s = kendall_s(xs, ys);
    let tau = (s as f64 / ((n0 - n1) * (n0 - n2)).sqrt()).clamp(-1.0, 1.0);

    let (p_value, method) = if n <= EXACT_P_MAX_N {
        (exact_p_value(xs, ys, s.abs()), PValueMethod::Exact)
    } else {
        let nf = n as f64;
        let sum = |t: &[u64], f: &dyn Fn(f64) -> f64| t.iter().map(|&t| f(t as f64)).sum::<f64>();
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let vt = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let vu = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let v1 = sum(&tx, &|t| t * (t - 1.0)) * sum(&ty, &|t| t * (t - 1.0));
        let v2 = sum(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&ty, &|t| t * (t - 1.0) * (t - 2.0));
        let var = (v0 - vt - vu) / 18.0
            + v1 / (2.0 * nf * (nf - 1.0))
            + v2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
        let z = s as f64 / var.sqrt();
        ((2.0 * normal_sf(z.abs())).min(1.0), PValueMethod::NormalApprox)
    };
    Ok(KendallResult {
        tau,
        p_value,
        n_pairs,
        method,
    })
}

/// Permutation p-value by Heap's algorithm over all orderings of `ys`.
fn exact_p_value(xs: &[f64], ys: &[f64], observed: i64) -> f64 {
    let n = ys.len();
    let mut perm = ys.to_vec();
    let mut c = vec![0usize; n];
    let mut total = 1u64;
    let mut extreme = u64::from(kendall_s(xs, &perm).abs() >= observed);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += 1;
            extreme += u64::from(kendall_s(xs, &perm).abs() >= observed);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Lower median: the element at 1-based rank `ceil(n/2)` of the sorted values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::argument("median of an empty vector"));
    }
    let mut v = values.to_vec();
    let k = v.len().div_ceil(2) - 1;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*m)
}

/// Average precision of `scores` ranking the positives in `labels`:
/// `Σ (R_k - R_{k-1}) P_k` over distinct score thresholds, highest first.
/// Zero when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let total_pos = labels.iter().filter(|&&y| y == 1).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let v = scores[order[k]];
        while k < order.len() && scores[order[k]] == v {
            tp += labels[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    ap
}
