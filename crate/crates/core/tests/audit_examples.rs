use fairlens::audit::{linear_probe, probe_awareness, reconstruct_fair, recover_unconstrained, FitRoute, RuleData};
use fairlens::fairness::massage;
use fairlens::nn::{Network, Scores};
use fairlens::{generate, Dataset, Error, Split, SyntheticSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Synthetic {
    f: Vec<f64>,
    g: Vec<f64>,
    s: Vec<u8>,
}

/// Logits `f ~ N(0, 3²)` and a group head within ±0.05 of `s`.
fn synthetic(n: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let f = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let g = s.iter().map(|&v| v as f64 + rng.random_range(-0.05..0.05)).collect();
    Synthetic { f, g, s }
}

fn scores(split: Split, x: &Synthetic) -> Scores {
    Scores {
        split,
        indices: (0..x.f.len()).collect(),
        f: x.f.clone(),
        g: Some(x.g.clone()),
    }
}

fn rule(f: &[f64], g: &[f64], a1: f64, a2: f64) -> Vec<u8> {
    f.iter().zip(g).map(|(f, g)| u8::from(f + a1 * g + a2 > 0.0)).collect()
}

#[test]
fn random_features_probe_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut draw = |n: usize| {
        let x = DMatrix::from_fn(n, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        (x, s)
    };
    let (xt, st) = draw(2_000);
    let (xe, se) = draw(2_000);
    let acc = linear_probe(&xt, &st, &xe, &se).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn identical_models_have_no_correlation() {
    let ds = generate(&SyntheticSpec { n_samples: 2_000, ..SyntheticSpec::default() }).unwrap();
    let net = Network::init(ds.n_features(), &[8, 4], false, &mut ChaCha8Rng::seed_from_u64(1));
    let models = [(0.0, &net), (1.0, &net), (5.0, &net)];
    assert!(matches!(probe_awareness(&models, &ds), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(probe_awareness(&models[..1], &ds), Err(Error::InsufficientData(_))));
}

#[test]
fn identity_target_gives_zero_weight() {
    let fit = synthetic(3_000, 1);
    let eval = synthetic(3_000, 2);
    let res = reconstruct_fair(
        &scores(Split::Validation, &fit),
        &rule(&fit.f, &fit.g, 0.0, 0.0),
        &scores(Split::Test, &eval),
        &rule(&eval.f, &eval.g, 0.0, 0.0),
    )
    .unwrap();
    assert!(res.coefficients.0.abs() <= 0.05, "a1 {}", res.coefficients.0);
    assert!(res.agreement >= 1.0 - 1e-3, "{}", res.agreement);
}

#[test]
fn planted_rule_is_recovered() {
    for seed in 0..5 {
        let fit = synthetic(3_000, 10 + seed);
        let eval = synthetic(3_000, 100 + seed);
        let target_fit = rule(&fit.f, &fit.g, -4.0, 2.0);
        let res = reconstruct_fair(
            &scores(Split::Validation, &fit),
            &target_fit,
            &scores(Split::Test, &eval),
            &rule(&eval.f, &eval.g, -4.0, 2.0),
        )
        .unwrap();
        assert!(res.agreement >= 0.99, "seed {seed}: {}", res.agreement);
        let ones = target_fit.iter().filter(|&&t| t == 1).count() as f64 / target_fit.len() as f64;
        assert!(res.fit_agreement >= ones.max(1.0 - ones));
    }
}

#[test]
fn coin_flip_target_caps_agreement() {
    let fit = synthetic(4_000, 3);
    let eval = synthetic(4_000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut coins = |n| (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect::<Vec<u8>>();
    let res = reconstruct_fair(
        &scores(Split::Validation, &fit),
        &coins(4_000),
        &scores(Split::Test, &eval),
        &coins(4_000),
    )
    .unwrap();
    assert!((res.agreement - 0.7).abs() <= 0.03, "{}", res.agreement);
}

#[test]
fn planted_unconstrained_rule_is_recovered() {
    let make = |seed| {
        let x = synthetic(3_000, seed);
        let g: Vec<f64> = x.s.iter().map(|&s| s as f64).collect();
        let r: Vec<f64> = x.f.iter().zip(&g).map(|(f, g)| f - 3.0 * g - 1.0).collect();
        let target: Vec<u8> = x.f.iter().map(|&f| u8::from(f > 0.0)).collect();
        (r, g, target)
    };
    let (rf, gf, tf) = make(20);
    let (re, ge, te) = make(21);
    let res = recover_unconstrained(
        RuleData { score: &rf, g: &gf, target: &tf },
        RuleData { score: &re, g: &ge, target: &te },
    )
    .unwrap();
    assert!(res.agreement >= 0.99, "{}", res.agreement);
    let (b1, b2) = res.coefficients;
    assert!(b1 < 0.0 && b2 < 0.0, "({b1}, {b2})");
}

#[test]
fn constant_group_head_reduces_to_a_threshold() {
    let make = |seed| {
        let x = synthetic(3_000, seed);
        let target: Vec<u8> = x.f.iter().map(|&f| u8::from(f > 0.7)).collect();
        (x.f, vec![0.5; 3_000], target)
    };
    let (rf, gf, tf) = make(30);
    let (re, ge, te) = make(31);
    let res = recover_unconstrained(
        RuleData { score: &rf, g: &gf, target: &tf },
        RuleData { score: &re, g: &ge, target: &te },
    )
    .unwrap();
    // Oracle: best single threshold on the evaluation rows.
    let mut sorted = re.clone();
    sorted.sort_by(f64::total_cmp);
    let best = sorted
        .iter()
        .map(|&t| te.iter().zip(&re).filter(|(&y, &r)| u8::from(r > t) == y).count())
        .max()
        .unwrap() as f64
        / re.len() as f64;
    assert!(res.agreement >= best - 0.01, "{} vs {best}", res.agreement);
    assert_ne!(res.route, FitRoute::Degenerate);
}

fn massaging_dataset() -> (Dataset, Scores) {
    // Rows 0..4 are group 0, 4..8 group 1, all in train.
    let y = vec![1, 1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 1, 0, 1, 0, 1];
    let s = vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 1, 1, 0, 0, 1, 1, 0];
    let mut split = vec![Split::Train; 8];
    split.extend([Split::Validation; 4]);
    split.extend([Split::Test; 4]);
    let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
    let ds = Dataset::from_raw(x, 1, y, s, split).unwrap();
    let scores = Scores {
        split: Split::Train,
        indices: (0..8).collect(),
        f: vec![0.9, 0.8, 0.4, 0.3, 0.7, 0.6, 0.2, 0.1],
        g: None,
    };
    (ds, scores)
}

#[test]
fn massaging_hand_example() {
    let (ds, scores) = massaging_dataset();
    let (out, plan) = massage(&ds, &scores, 1.0).unwrap();
    assert_eq!(plan.m, 1);
    assert_eq!(plan.advantaged_group, 0);
    assert_eq!(plan.promote_idx, [5]);
    assert_eq!(plan.demote_idx, [1]);
    assert_eq!(&out.targets()[..8], [1, 0, 0, 0, 1, 1, 0, 0]);
    assert_eq!(&out.targets()[8..], &ds.targets()[8..]);

    let (same, plan0) = massage(&ds, &scores, 0.0).unwrap();
    assert_eq!(same, ds);
    assert_eq!(plan0.m, plan.m);
    assert!(matches!(massage(&ds, &scores, 1.5), Err(Error::Argument(_))));
}

#[test]
fn half_lambda_halves_the_pairs() {
    // Group 0: 8 of 8 positive; group 1: 0 of 8. M = 4.
    let n = 8;
    let mut y: Vec<u8> = [vec![1; n], vec![0; n]].concat();
    let mut s: Vec<u8> = [vec![0; n], vec![1; n]].concat();
    let mut split = vec![Split::Train; 2 * n];
    for (k, tag) in [Split::Validation, Split::Test].into_iter().enumerate() {
        for (yy, ss) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            y.push(yy);
            s.push(ss);
            split.push(tag);
        }
        let _ = k;
    }
    let x: Vec<f64> = (0..y.len()).map(|i| (i % 5) as f64).collect();
    let ds = Dataset::from_raw_single_label_ok(x, 1, y, s, split).unwrap();
    let scores = Scores {
        split: Split::Train,
        indices: (0..2 * n).collect(),
        f: (0..2 * n).map(|i| i as f64 * 0.1).collect(),
        g: None,
    };
    let (_, plan) = massage(&ds, &scores, 0.5).unwrap();
    assert_eq!(plan.m, 4);
    assert_eq!((plan.promote_idx.len(), plan.demote_idx.len()), (2, 2));
}
