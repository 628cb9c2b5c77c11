//! WebAssembly bindings behind `www/index.html`.
//!
//! A [`Lab`] draws a synthetic dataset and trains an unconstrained and a
//! two-head network once. The page then asks it for a trade-off curve, a
//! counterfactual audit of a chosen `(a1, a2)` rule, and a massaging pass.

use fairlens::audit::{counterfactual_flips, region_indices, CounterfactualReport};
use fairlens::fairness::{combine_grid_search, equidistant_bounds, evaluate, lipton_thresholds, massage, CombinedClassifier};
use fairlens::{generate, train, Dataset, Method, Network, Result, Scores, Split, SyntheticSpec, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Rows sent back for plotting; enough to read the picture, small enough to draw fast.
const MAX_POINTS: usize = 600;

fn quick(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        epochs: 12,
        hidden_widths: vec![16, 8],
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub bound: f64,
    pub accuracy: f64,
    pub ddp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tradeoff {
    /// Test accuracy of `1(g > 0.5)` for the protected attribute.
    pub group_head_accuracy: f64,
    pub unconstrained: CurvePoint,
    pub two_head: Vec<CurvePoint>,
    pub lipton: Vec<CurvePoint>,
    /// Rules chosen per bound, for the counterfactual panel.
    pub rules: Vec<CombinedClassifier>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Point {
    pub f: f64,
    pub g: f64,
    pub s: u8,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counterfactual {
    pub report: CounterfactualReport,
    /// Test rows whose decision depends on the inferred group.
    pub region_size: usize,
    /// Score interval of the region, `(-a2 - max(a1, 0), -a2 - min(a1, 0))`.
    pub region_bounds: (f64, f64),
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Massaging {
    pub m: usize,
    pub flipped_pairs: usize,
    /// Train positive rates `[s = 0, s = 1]` before and after relabelling.
    pub rates_before: [f64; 2],
    pub rates_after: [f64; 2],
    pub test_accuracy: f64,
    pub test_ddp: f64,
}

#[wasm_bindgen]
pub struct Lab {
    ds: Dataset,
    seed: u64,
    plain_train: Scores,
    plain_val: Scores,
    plain_test: Scores,
    heads_val: Scores,
    heads_test: Scores,
}

fn train_rates(ds: &Dataset) -> [f64; 2] {
    let (y, s) = (ds.targets_of(Split::Train), ds.protected_of(Split::Train));
    let mut pos = [0usize; 2];
    let mut n = [0usize; 2];
    for (&yi, &si) in y.iter().zip(&s) {
        n[si as usize] += 1;
        pos[si as usize] += yi as usize;
    }
    [pos[0] as f64 / n[0] as f64, pos[1] as f64 / n[1] as f64]
}

impl Lab {
    pub fn build(n_samples: usize, separability: f64, base_rate_gap: f64, seed: u64) -> Result<Lab> {
        let ds = generate(&SyntheticSpec {
            n_samples,
            separability,
            base_rate_gap,
            seed,
            ..SyntheticSpec::default()
        })?;
        let plain: Network = train(&ds, &quick(Method::Unconstrained, seed))?;
        let heads: Network = train(&ds, &quick(Method::TwoHead, seed))?;
        Ok(Lab {
            plain_train: plain.score(&ds, Split::Train)?,
            plain_val: plain.score(&ds, Split::Validation)?,
            plain_test: plain.score(&ds, Split::Test)?,
            heads_val: heads.score(&ds, Split::Validation)?,
            heads_test: heads.score(&ds, Split::Test)?,
            ds,
            seed,
        })
    }

    pub fn tradeoff_curve(&self, count: usize) -> Result<Tradeoff> {
        let (s_val, y_val) = (self.ds.protected_of(Split::Validation), self.ds.targets_of(Split::Validation));
        let (s_test, y_test) = (self.ds.protected_of(Split::Test), self.ds.targets_of(Split::Test));
        let point = |bound: f64, pred: &[u8]| -> Result<CurvePoint> {
            let r = evaluate(pred, &y_test, &s_test, Split::Test)?;
            Ok(CurvePoint { bound, accuracy: r.accuracy, ddp: r.ddp })
        };
        let reference = evaluate(&self.plain_val.decisions(), &y_val, &s_val, Split::Validation)?;
        let (g_val, g_test) = (self.heads_val.require_g()?, self.heads_test.require_g()?);
        let hits = g_test.iter().zip(&s_test).filter(|(&g, &s)| u8::from(g > 0.5) == s).count();
        let mut out = Tradeoff {
            group_head_accuracy: hits as f64 / s_test.len() as f64,
            unconstrained: point(reference.ddp.abs(), &self.plain_test.decisions())?,
            two_head: Vec::new(),
            lipton: Vec::new(),
            rules: Vec::new(),
        };
        for bound in equidistant_bounds(reference.ddp, count.max(2)) {
            let rule = combine_grid_search(&self.heads_val.f, g_val, &s_val, &y_val, bound)?;
            out.two_head.push(point(bound, &rule.predict(&self.heads_test.f, g_test))?);
            out.rules.push(rule);
            let t = lipton_thresholds(&self.plain_val.f, &s_val, &y_val, bound)?;
            out.lipton.push(point(bound, &t.predict(&self.plain_test.f, &s_test))?);
        }
        Ok(out)
    }

    pub fn counterfactual_audit(&self, a1: f64, a2: f64) -> Result<Counterfactual> {
        let rule = CombinedClassifier { a1, a2, constraint: 1.0 };
        let (f, g) = (&self.heads_test.f, self.heads_test.require_g()?);
        let s = self.ds.protected_of(Split::Test);
        let report = counterfactual_flips(f, g, &s, &rule)?;
        let medians = [report.medians.0, report.medians.1];
        let stride = f.len().div_ceil(MAX_POINTS).max(1);
        let points = (0..f.len())
            .step_by(stride)
            .map(|i| Point {
                f: f[i],
                g: g[i],
                s: s[i],
                flipped: rule.decide(f[i], g[i]) != rule.decide(f[i], medians[1 - s[i] as usize]),
            })
            .collect();
        Ok(Counterfactual {
            report,
            region_size: region_indices(f, a1, a2).len(),
            region_bounds: (-a2 - a1.max(0.0), -a2 - a1.min(0.0)),
            points,
        })
    }

    pub fn massage_and_retrain(&self, frac: f64) -> Result<Massaging> {
        let (relabelled, plan) = massage(&self.ds, &self.plain_train, frac)?;
        let net = train(&relabelled, &quick(Method::Unconstrained, self.seed))?;
        let (s_test, y_test) = (self.ds.protected_of(Split::Test), self.ds.targets_of(Split::Test));
        let r = evaluate(&net.score(&self.ds, Split::Test)?.decisions(), &y_test, &s_test, Split::Test)?;
        Ok(Massaging {
            m: plan.m,
            flipped_pairs: plan.promote_idx.len(),
            rates_before: train_rates(&self.ds),
            rates_after: train_rates(&relabelled),
            test_accuracy: r.accuracy,
            test_ddp: r.ddp,
        })
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Lab {
    #[wasm_bindgen(constructor)]
    pub fn new(n_samples: usize, separability: f64, base_rate_gap: f64, seed: u32) -> std::result::Result<Lab, JsError> {
        Lab::build(n_samples, separability, base_rate_gap, seed.into()).map_err(|e| JsError::new(&e.to_string()))
    }

    /// Trade-off curves of two-head and group-threshold rules as JSON.
    pub fn tradeoff(&self, count: usize) -> std::result::Result<String, JsError> {
        to_js(self.tradeoff_curve(count))
    }

    /// Counterfactual flips and region of `1(f + a1·g + a2 > 0)` as JSON.
    pub fn counterfactual(&self, a1: f64, a2: f64) -> std::result::Result<String, JsError> {
        to_js(self.counterfactual_audit(a1, a2))
    }

    /// Massaging summary for a flip fraction in `[0, 1]` as JSON.
    pub fn massaging(&self, frac: f64) -> std::result::Result<String, JsError> {
        to_js(self.massage_and_retrain(frac))
    }
}
