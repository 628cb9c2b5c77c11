//! Brute-force oracles for the search, statistics and audit routines.

use fairlens::audit::{counterfactual_flips, region_indices};
use fairlens::fairness::{
    combine_grid_search, combine_grid_search_with, ddp, lipton_thresholds, CombinedClassifier, GridSpec,
};
use fairlens::stats::{kendall_tau, logistic_fit, median, PValueMethod};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Instance {
    f: Vec<f64>,
    s: Vec<u8>,
    y: Vec<u8>,
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> Instance {
    let n = rng.random_range(4..=max_n);
    let mut s: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    s[0] = 0;
    s[1] = 1;
    // Coarse scores so ties occur.
    let f = (0..n).map(|_| (rng.random_range(-20..20) as f64) / 4.0).collect();
    let y = (0..n).map(|_| rng.random_range(0..2)).collect();
    Instance { f, s, y }
}

fn accuracy(pred: &[u8], y: &[u8]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut out = vec![f64::NEG_INFINITY, f64::INFINITY];
    out.extend(u.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.extend(u.iter().copied());
    out
}

/// Best accuracy over every pair of per-group thresholds with `|DDP| <= bound`.
fn threshold_pair_oracle(inst: &Instance, bound: f64) -> f64 {
    let group = |g: u8| -> Vec<f64> {
        inst.f.iter().zip(&inst.s).filter(|(_, &s)| s == g).map(|(&v, _)| v).collect()
    };
    let mut best = 0.0f64;
    for &t0 in &candidate_thresholds(&group(0)) {
        for &t1 in &candidate_thresholds(&group(1)) {
            let pred: Vec<u8> = inst
                .f
                .iter()
                .zip(&inst.s)
                .map(|(&v, &s)| u8::from(v > if s == 1 { t1 } else { t0 }))
                .collect();
            if ddp(&pred, &inst.s).unwrap().abs() <= bound {
                best = best.max(accuracy(&pred, &inst.y));
            }
        }
    }
    best
}

fn bound_for(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..0.6),
    }
}

#[test]
fn lipton_matches_exhaustive_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let inst = random_instance(&mut rng, 40);
        let bound = bound_for(&mut rng);
        let t = lipton_thresholds(&inst.f, &inst.s, &inst.y, bound).unwrap();
        let pred = t.predict(&inst.f, &inst.s);
        assert!(ddp(&pred, &inst.s).unwrap().abs() <= bound, "case {case}");
        assert_eq!(accuracy(&pred, &inst.y), threshold_pair_oracle(&inst, bound), "case {case}");
    }
}

#[test]
fn grid_search_with_binary_g_tracks_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid_only = GridSpec {
        exact_sweep: false,
        ..GridSpec::default()
    };
    for case in 0..200 {
        let inst = random_instance(&mut rng, 40);
        let bound = bound_for(&mut rng);
        let g: Vec<f64> = inst.s.iter().map(|&s| s as f64).collect();
        let oracle = threshold_pair_oracle(&inst, bound);
        let slack = 1.0 / inst.f.len() as f64;
        for spec in [GridSpec::default(), grid_only] {
            let c = combine_grid_search_with(&inst.f, &g, &inst.s, &inst.y, bound, spec).unwrap();
            let pred = c.predict(&inst.f, &g);
            assert!(ddp(&pred, &inst.s).unwrap().abs() <= bound, "case {case}");
            let acc = accuracy(&pred, &inst.y);
            assert!(acc >= oracle - slack - 1e-12, "case {case}: {acc} vs {oracle}");
            assert!(acc <= oracle + 1e-12, "case {case}: {acc} beats the oracle {oracle}");
        }
    }
}

#[test]
fn twelve_point_binary_instance_hits_oracle() {
    let f = [2.1, 1.4, 0.3, -0.2, -1.1, -2.5, 1.9, 0.8, 0.1, -0.4, -1.6, -2.2];
    let s = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let y = [1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1, 0];
    let g: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let inst = Instance { f: f.to_vec(), s: s.to_vec(), y: y.to_vec() };
    for bound in [0.0, 1.0 / 6.0, 0.5, 1.0] {
        let c = combine_grid_search(&f, &g, &s, &y, bound).unwrap();
        assert_eq!(accuracy(&c.predict(&f, &g), &y), threshold_pair_oracle(&inst, bound));
    }
}

/// Every ordering of `f + a1·g` over `a1 ∈ [-15, 15]`, each with every cut.
fn combination_oracle(f: &[f64], g: &[f64], s: &[u8], y: &[u8], bound: f64) -> f64 {
    let n = f.len();
    let mut knots = vec![-15.0, 15.0];
    for i in 0..n {
        for j in i + 1..n {
            if g[i] != g[j] {
                let a = (f[j] - f[i]) / (g[i] - g[j]);
                if (-15.0..=15.0).contains(&a) {
                    knots.push(a);
                }
            }
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut probes: Vec<f64> = knots.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    probes.extend(knots.iter().copied());
    let mut best = 0.0f64;
    for a1 in probes {
        let vals: Vec<f64> = (0..n).map(|i| f[i] + a1 * g[i]).collect();
        for a2 in candidate_thresholds(&vals).into_iter().map(|t| -t) {
            let pred: Vec<u8> = vals.iter().map(|&v| u8::from(v + a2 > 0.0)).collect();
            if ddp(&pred, s).unwrap().abs() <= bound {
                best = best.max(accuracy(&pred, y));
            }
        }
    }
    best
}

#[test]
fn exact_sweep_matches_combination_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..150 {
        let inst = random_instance(&mut rng, 18);
        let bound = bound_for(&mut rng);
        let g: Vec<f64> = inst
            .s
            .iter()
            .map(|&s| (s as f64 + rng.random_range(-0.3..0.3)).clamp(-0.2, 1.2))
            .collect();
        let c = combine_grid_search(&inst.f, &g, &inst.s, &inst.y, bound).unwrap();
        let pred = c.predict(&inst.f, &g);
        assert!(ddp(&pred, &inst.s).unwrap().abs() <= bound, "case {case}");
        let oracle = combination_oracle(&inst.f, &g, &inst.s, &inst.y, bound);
        assert_eq!(accuracy(&pred, &inst.y), oracle, "case {case}");
    }
}

#[test]
fn vacuous_bound_beats_plain_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 40);
        let g: Vec<f64> = (0..inst.f.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = combine_grid_search(&inst.f, &g, &inst.s, &inst.y, 1.0).unwrap();
        let plain: Vec<u8> = inst.f.iter().map(|&v| u8::from(v > 0.0)).collect();
        assert!(accuracy(&c.predict(&inst.f, &g), &inst.y) >= accuracy(&plain, &inst.y));
    }
}

#[test]
fn saturated_scores_give_all_positive() {
    let f = [40.0, 55.0, 60.0, 80.0, 42.0, 90.0];
    let g = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let s = [0, 1, 0, 1, 0, 1];
    let y = [1; 6];
    let c = combine_grid_search(&f, &g, &s, &y, 0.0).unwrap();
    let pred = c.predict(&f, &g);
    assert_eq!(pred, vec![1; 6]);
    assert_eq!(ddp(&pred, &s).unwrap(), 0.0);
}

#[test]
fn lipton_hand_instance_matches_enumeration() {
    let inst = Instance {
        f: vec![0.9, 0.6, 0.4, 0.8, 0.5, 0.2],
        s: vec![0, 0, 0, 1, 1, 1],
        y: vec![1, 1, 0, 0, 1, 0],
    };
    let t = lipton_thresholds(&inst.f, &inst.s, &inst.y, 0.0).unwrap();
    let pred = t.predict(&inst.f, &inst.s);
    assert_eq!(ddp(&pred, &inst.s).unwrap(), 0.0);
    assert_eq!(accuracy(&pred, &inst.y), threshold_pair_oracle(&inst, 0.0));
    assert_eq!(accuracy(&pred, &inst.y), 5.0 / 6.0);
}

#[test]
fn lipton_vacuous_bound_dominates_global_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, 40);
        let t = lipton_thresholds(&inst.f, &inst.s, &inst.y, 1.0).unwrap();
        let acc = accuracy(&t.predict(&inst.f, &inst.s), &inst.y);
        let global = candidate_thresholds(&inst.f)
            .into_iter()
            .map(|th| {
                let pred: Vec<u8> = inst.f.iter().map(|&v| u8::from(v > th)).collect();
                accuracy(&pred, &inst.y)
            })
            .fold(0.0, f64::max);
        assert!(acc >= global);
        assert_eq!(acc, threshold_pair_oracle(&inst, 1.0));
    }
}

#[test]
fn lipton_symmetric_groups_share_threshold() {
    let f = [0.9, 0.4, -0.3, 1.2, 0.9, 0.4, -0.3, 1.2];
    let s = [0, 0, 0, 0, 1, 1, 1, 1];
    let y = [1, 0, 0, 1, 1, 0, 0, 1];
    for bound in [0.0, 0.3, 1.0] {
        let t = lipton_thresholds(&f, &s, &y, bound).unwrap();
        assert_eq!(t.t0, t.t1);
    }
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn tau_b_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let (mut s, mut tx, mut ty, mut pairs) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (sign(xs[j] - xs[i]), sign(ys[j] - ys[i]));
            s += dx * dy;
            tx += i64::from(dx == 0);
            ty += i64::from(dy == 0);
            pairs += 1;
        }
    }
    s as f64 / (((pairs - tx) as f64) * ((pairs - ty) as f64)).sqrt()
}

#[test]
fn kendall_pair_counting_oracle() {
    let r = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((r.tau - tau_b_oracle(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).abs() < 1e-15);
    assert!((r.tau - 4.0 / 6.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = rng.random_range(3..30);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        match kendall_tau(&xs, &ys) {
            Ok(r) => assert!((r.tau - tau_b_oracle(&xs, &ys)).abs() < 1e-12),
            Err(_) => assert!(xs.iter().all(|&v| v == xs[0]) || ys.iter().all(|&v| v == ys[0])),
        }
    }
}

fn permutations(items: &mut Vec<f64>, k: usize, out: &mut Vec<Vec<f64>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

#[test]
fn kendall_exact_p_value_by_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.random_range(3..=7);
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        if ys.iter().all(|&v| v == ys[0]) {
            ys[0] += 1.0;
        }
        let r = kendall_tau(&xs, &ys).unwrap();
        assert_eq!(r.method, PValueMethod::Exact);
        let observed = tau_b_oracle(&xs, &ys).abs();
        let mut all = Vec::new();
        permutations(&mut ys.clone(), 0, &mut all);
        let extreme = all.iter().filter(|p| tau_b_oracle(&xs, p).abs() >= observed - 1e-12).count();
        let expected = extreme as f64 / all.len() as f64;
        assert!((r.p_value - expected).abs() < 1e-12, "{} vs {expected}", r.p_value);
    }
}

#[test]
fn median_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [1usize, 2, 3, 4, 1000, 1001] {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(median(&v).unwrap(), sorted[n.div_ceil(2) - 1]);
    }
}

fn penalized_loss(x: &DMatrix<f64>, y: &[u8], w: &[f64], b: f64, ridge: f64) -> f64 {
    let n = x.nrows();
    let mut loss = 0.0;
    for i in 0..n {
        let z: f64 = (0..x.ncols()).map(|j| x[(i, j)] * w[j]).sum::<f64>() + b;
        let p = if y[i] == 1 { z } else { -z };
        loss += (1.0 + (-p).exp()).ln();
    }
    loss / n as f64 + 0.5 * ridge * w.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn logistic_fit_beats_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, k) = (60, 3);
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal));
    let y: Vec<u8> = (0..n)
        .map(|i| {
            let z = 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)] + 0.2 + rng.sample::<f64, _>(StandardNormal);
            u8::from(z > 0.0)
        })
        .collect();
    let ridge = 1e-6;
    let fit = logistic_fit(&x, &y, None, ridge).unwrap();
    assert!(fit.converged);
    assert!(fit.gradient_norm <= 1e-8);
    let best = penalized_loss(&x, &y, &fit.weights, fit.intercept, ridge);
    for _ in 0..500 {
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        let w: Vec<f64> = fit.weights.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let b = fit.intercept + scale * rng.sample::<f64, _>(StandardNormal);
        assert!(penalized_loss(&x, &y, &w, b, ridge) >= best - 1e-12);
    }
}

#[test]
fn logistic_offset_with_zero_columns() {
    let n = 40;
    let offset: Vec<f64> = (0..n).map(|i| (i as f64 - 20.0) / 10.0).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 3 != 0)).collect();
    let x = DMatrix::zeros(n, 2);
    let fit = logistic_fit(&x, &y, Some(&offset), 0.0).unwrap();
    assert!(fit.converged);
    assert!(fit.weights.iter().all(|w| w.abs() < 1e-12));
    // Intercept solves Σ σ(o_i + b) = Σ y_i.
    let target = y.iter().map(|&v| v as f64).sum::<f64>();
    let fitted: f64 = offset.iter().map(|o| 1.0 / (1.0 + (-(o + fit.intercept)).exp())).sum();
    assert!((fitted - target).abs() < 1e-8);
    let pred = fit.predict(&x, Some(&offset));
    let expected: Vec<u8> = offset.iter().map(|o| u8::from(o + fit.intercept > 0.0)).collect();
    assert_eq!(pred, expected);
}

/// Decisions before and after swapping `g` for the other group's value.
fn flip_oracle(f: &[f64], g: &[f64], s: &[u8], c: &CombinedClassifier, medians: [f64; 2]) -> Vec<(usize, u8, u8)> {
    (0..f.len())
        .filter_map(|i| {
            let before = u8::from(f[i] + c.a1 * g[i] + c.a2 > 0.0);
            let after = u8::from(f[i] + c.a1 * medians[1 - s[i] as usize] + c.a2 > 0.0);
            (before != after).then_some((i, before, after))
        })
        .collect()
}

#[test]
fn counterfactual_twenty_point_instance() {
    // Exactly binary g; a1 = -c with c = 1.5 and a2 = 0.25.
    let f: Vec<f64> = (0..20).map(|i| -2.5 + 0.25 * i as f64).collect();
    let s: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
    let g: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    let c = CombinedClassifier { a1: -1.5, a2: 0.25, constraint: 0.0 };
    let report = counterfactual_flips(&f, &g, &s, &c).unwrap();
    let flips = flip_oracle(&f, &g, &s, &c, [0.0, 1.0]);

    // Group 1 gains when recoded as group 0: f + a2 in (0, c] goes 0 -> 1.
    // Group 0 loses when recoded as group 1: f + a2 in (0, c] goes 1 -> 0.
    for &(i, before, after) in &flips {
        let v = f[i] + c.a2;
        assert!(v > 0.0 && v <= 1.5);
        if s[i] == 1 {
            assert_eq!((before, after), (0, 1));
        } else {
            assert_eq!((before, after), (1, 0));
        }
    }
    let count = |grp: u8, dir: (u8, u8)| flips.iter().filter(|&&(i, b, a)| s[i] == grp && (b, a) == dir).count();
    assert_eq!(report.flips_0to1_count, [count(0, (0, 1)), count(1, (0, 1))]);
    assert_eq!(report.flips_1to0_count, [count(0, (1, 0)), count(1, (1, 0))]);
    assert_eq!(report.flips_0to1_count, [0, 3]);
    assert_eq!(report.flips_1to0_count, [3, 0]);
    assert_eq!(report.flip_fraction_total, 6.0 / 20.0);
    assert_eq!(report.medians, (0.0, 1.0));
}

#[test]
fn counterfactual_zero_a1_never_flips() {
    let f = [-1.0, 0.5, 2.0, -0.2];
    let g = [0.1, 0.9, 0.3, 0.7];
    let s = [0, 1, 0, 1];
    let c = CombinedClassifier { a1: 0.0, a2: 0.3, constraint: 1.0 };
    let r = counterfactual_flips(&f, &g, &s, &c).unwrap();
    assert_eq!(r.flip_fraction_total, 0.0);
    assert_eq!(r.flips_0to1_group, [0.0, 0.0]);
    assert_eq!(r.flips_1to0_group, [0.0, 0.0]);
}

#[test]
fn region_equals_binary_counterfactual_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in 2..=100 {
        for _ in 0..5 {
            let mut s: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            s[0] = 0;
            s[1] = 1;
            s.shuffle(&mut rng);
            let g: Vec<f64> = s.iter().map(|&v| v as f64).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-40..40) as f64 / 8.0).collect();
            let a1 = rng.random_range(-40..40) as f64 / 8.0;
            let a2 = rng.random_range(-24..24) as f64 / 8.0;
            let c = CombinedClassifier { a1, a2, constraint: 1.0 };
            let region = region_indices(&f, a1, a2);
            let flipped: Vec<usize> = flip_oracle(&f, &g, &s, &c, [0.0, 1.0]).into_iter().map(|t| t.0).collect();
            assert_eq!(region, flipped, "n {n} a1 {a1} a2 {a2}");
            let report = counterfactual_flips(&f, &g, &s, &c).unwrap();
            let total: usize = report.flips_0to1_count.iter().chain(&report.flips_1to0_count).sum();
            assert_eq!(total, region.len());
        }
    }
}

#[test]
fn region_hand_example_and_mirror() {
    let f = [-2.0, -0.5, 0.0, 0.5, 2.0, 1.0];
    assert_eq!(region_indices(&f, 2.0, -1.0), vec![1, 2, 3, 5]);
    assert!(region_indices(&f, 0.0, -1.0).is_empty());
    // Negating a1 and moving a2 to a1 + a2 swaps the roles of g = 0 and g = 1.
    assert_eq!(region_indices(&f, -2.0, 1.0), vec![1, 2, 3, 5]);
}
