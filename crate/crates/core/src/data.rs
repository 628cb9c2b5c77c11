//! Datasets: synthetic generation, CSV ingest, deterministic splits and
//! stratified mini-batches.
//!
//! Features are standardized column-wise with statistics from the train split
//! only. The statistics are kept on the [`Dataset`] so raw values can be
//! written back out.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Validation,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

/// Per-column affine map applied to raw features: `(raw - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Fits on the rows selected by `rows`. Constant columns get scale 1.
    fn fit(raw: &[f64], d: usize, rows: &[usize]) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(&raw[i * d..(i + 1) * d]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for j in 0..d {
                let c = raw[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, raw: &mut [f64]) {
        let d = self.mean.len();
        for row in raw.chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
        }
    }

    pub fn invert(&self, standardized: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = standardized.to_vec();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * self.scale[j] + self.mean[j];
            }
        }
        out
    }
}

/// Feature matrix with binary targets `y`, binary protected attribute `s`
/// and a split tag per row. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_features: usize,
    feature_names: Vec<String>,
    target_name: String,
    protected_name: String,
    /// Standardized, row-major `n x d`.
    features: Vec<f64>,
    /// Features as supplied, kept so exports are exact.
    raw: Vec<f64>,
    targets: Vec<u8>,
    protected: Vec<u8>,
    split: Vec<Split>,
    standardization: Standardization,
}

struct Columns {
    feature_names: Vec<String>,
    target_name: String,
    protected_name: String,
}

impl Dataset {
    /// Builds a dataset from raw (unstandardized) row-major features and
    /// standardizes them with train-split statistics.
    pub fn from_raw(
        raw_features: Vec<f64>,
        n_features: usize,
        targets: Vec<u8>,
        protected: Vec<u8>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let names = Columns {
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
            target_name: "y".into(),
            protected_name: "s".into(),
        };
        let ds = Self::assemble(raw_features, targets, protected, split, names)?;
        ds.validate(true)?;
        Ok(ds)
    }

    /// Like [`Dataset::from_raw`] but allows a split to contain a single
    /// target label. Needed for degenerate inputs such as all-negative data.
    pub fn from_raw_single_label_ok(
        raw_features: Vec<f64>,
        n_features: usize,
        targets: Vec<u8>,
        protected: Vec<u8>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let names = Columns {
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
            target_name: "y".into(),
            protected_name: "s".into(),
        };
        let ds = Self::assemble(raw_features, targets, protected, split, names)?;
        ds.validate(false)?;
        Ok(ds)
    }

    fn assemble(
        mut raw: Vec<f64>,
        targets: Vec<u8>,
        protected: Vec<u8>,
        split: Vec<Split>,
        names: Columns,
    ) -> Result<Self> {
        let d = names.feature_names.len();
        if d == 0 {
            return Err(Error::validation("n_features", "must be positive"));
        }
        let n = targets.len();
        if raw.len() != n * d || protected.len() != n || split.len() != n {
            return Err(Error::argument(format!(
                "inconsistent lengths: {} feature values for d={d}, {} targets, {} protected, {} split tags",
                raw.len(),
                n,
                protected.len(),
                split.len()
            )));
        }
        if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "features",
                format!("non-finite value at row {}", pos / d),
            ));
        }
        let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
        let standardization = if train.is_empty() {
            Standardization::identity(d)
        } else {
            Standardization::fit(&raw, d, &train)
        };
        let original = raw.clone();
        standardization.apply(&mut raw);
        Ok(Self {
            n_features: d,
            feature_names: names.feature_names,
            target_name: names.target_name,
            protected_name: names.protected_name,
            features: raw,
            raw: original,
            targets,
            protected,
            split,
            standardization,
        })
    }

    fn validate(&self, require_both_labels: bool) -> Result<()> {
        self.validate_values()?;
        self.check_splits(require_both_labels)
    }

    fn validate_values(&self) -> Result<()> {
        if let Some(i) = self.targets.iter().position(|&v| v > 1) {
            return Err(Error::validation("targets", format!("non-binary value at row {i}")));
        }
        if let Some(i) = self.protected.iter().position(|&v| v > 1) {
            return Err(Error::validation("protected", format!("non-binary value at row {i}")));
        }
        Ok(())
    }

    /// Checks that every split is nonempty and holds both protected groups
    /// (and both labels if asked). Loaded files are not held to this until
    /// they are used for training or evaluation.
    pub fn check_splits(&self, require_both_labels: bool) -> Result<()> {
        for split in Split::ALL {
            let mut seen_s = [false; 2];
            let mut seen_y = [false; 2];
            let mut count = 0usize;
            for i in 0..self.len() {
                if self.split[i] == split {
                    count += 1;
                    seen_s[self.protected[i] as usize] = true;
                    seen_y[self.targets[i] as usize] = true;
                }
            }
            if count == 0 {
                return Err(Error::validation("split", format!("split `{split}` is empty")));
            }
            if !(seen_s[0] && seen_s[1]) {
                return Err(Error::validation(
                    "protected",
                    format!("split `{split}` lacks one protected group"),
                ));
            }
            if require_both_labels && !(seen_y[0] && seen_y[1]) {
                return Err(Error::validation(
                    "targets",
                    format!("split `{split}` lacks one target label"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Standardized feature row.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }

    pub fn protected(&self) -> &[u8] {
        &self.protected
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Row indices belonging to `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn targets_of(&self, split: Split) -> Vec<u8> {
        self.indices(split).into_iter().map(|i| self.targets[i]).collect()
    }

    pub fn protected_of(&self, split: Split) -> Vec<u8> {
        self.indices(split).into_iter().map(|i| self.protected[i]).collect()
    }

    /// Copy with replaced targets; features, splits and standardization are kept.
    pub fn with_targets(&self, targets: Vec<u8>) -> Result<Self> {
        if targets.len() != self.len() {
            return Err(Error::argument("target vector length differs from dataset"));
        }
        let mut out = self.clone();
        out.targets = targets;
        out.validate(false)?;
        Ok(out)
    }

    /// Writes the dataset back to CSV with raw (de-standardized) features and
    /// a `split` column.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend([self.target_name.as_str(), self.protected_name.as_str(), "split"]);
        w.write_record(&header)?;
        let raw = &self.raw;
        let d = self.n_features;
        let mut record = Vec::with_capacity(d + 3);
        for i in 0..self.len() {
            record.clear();
            record.extend(raw[i * d..(i + 1) * d].iter().map(|v| v.to_string()));
            record.push(self.targets[i].to_string());
            record.push(self.protected[i].to_string());
            record.push(self.split[i].as_str().to_string());
            w.write_record(&record)?;
        }
        Ok(())
    }
}

/// Parameters of the synthetic group-structured generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    /// Fraction of rows with `s = 1`.
    pub group_balance: f64,
    /// Each group mean sits at `±separability` along a seeded unit direction.
    pub separability: f64,
    /// Target `P(y=1|s=1) - P(y=1|s=0)`.
    pub base_rate_gap: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_features: 8,
            group_balance: 0.5,
            separability: 3.0,
            base_rate_gap: 0.3,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::validation("n_samples", "must be positive"));
        }
        if self.n_features == 0 {
            return Err(Error::validation("n_features", "must be positive"));
        }
        if !(self.group_balance > 0.0 && self.group_balance < 1.0) {
            return Err(Error::validation("group_balance", "must lie in (0, 1)"));
        }
        if !(self.separability >= 0.0 && self.separability.is_finite()) {
            return Err(Error::validation("separability", "must be finite and nonnegative"));
        }
        if !(-1.0..=1.0).contains(&self.base_rate_gap) {
            return Err(Error::validation("base_rate_gap", "must lie in [-1, 1]"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::validation("label_noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Intercept `c` with `mean(sigmoid(margins + c)) = rate`, by bisection.
fn calibrate_intercept(margins: &[f64], rate: f64) -> f64 {
    let mean_at = |c: f64| margins.iter().map(|m| sigmoid(m + c)).sum::<f64>() / margins.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a synthetic dataset.
///
/// Features are `N(±separability·u, I)` by group; labels follow
/// `Bernoulli(sigmoid(w·x + c_s))` with a seeded unit vector `w` and group
/// intercepts calibrated so the positive rates straddle 0.5 by the requested
/// gap, after accounting for the label-noise flips.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d) = (spec.n_samples, spec.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = unit_vector(&mut rng, d);
    let u = unit_vector(&mut rng, d);

    let mut protected = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * d);
    for _ in 0..n {
        let s = u8::from(rng.random::<f64>() < spec.group_balance);
        let sign = if s == 1 { 1.0 } else { -1.0 };
        for &uj in &u {
            let z: f64 = rng.sample(StandardNormal);
            raw.push(z + sign * spec.separability * uj);
        }
        protected.push(s);
    }

    let margins: Vec<f64> = raw
        .chunks(d)
        .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let eta = spec.label_noise;
    let mut intercepts = [0.0; 2];
    for (group, c) in intercepts.iter_mut().enumerate() {
        let sign = if group == 1 { 1.0 } else { -1.0 };
        let post_noise = 0.5 + sign * spec.base_rate_gap / 2.0;
        let pre_noise = ((post_noise - eta) / (1.0 - 2.0 * eta)).clamp(1e-6, 1.0 - 1e-6);
        let group_margins: Vec<f64> = margins
            .iter()
            .zip(&protected)
            .filter(|(_, &s)| s as usize == group)
            .map(|(m, _)| *m)
            .collect();
        if !group_margins.is_empty() {
            *c = calibrate_intercept(&group_margins, pre_noise);
        }
    }

    let mut targets: Vec<u8> = margins
        .iter()
        .zip(&protected)
        .map(|(m, &s)| u8::from(rng.random::<f64>() < sigmoid(m + intercepts[s as usize])))
        .collect();
    let n_flip = (eta * n as f64).round() as usize;
    if n_flip > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..n_flip] {
            targets[i] ^= 1;
        }
    }

    let split = stratified_split(&targets, &protected, spec.seed);
    Dataset::from_raw(raw, d, targets, protected, split)
}

/// Assigns a 70/15/15 train/val/test split, stratified jointly on `(y, s)`.
pub fn stratified_split(targets: &[u8], protected: &[u8], seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17);
    let mut split = vec![Split::Train; targets.len()];
    for cell in 0..4u8 {
        let mut members: Vec<usize> = (0..targets.len())
            .filter(|&i| targets[i] * 2 + protected[i] == cell)
            .collect();
        members.shuffle(&mut rng);
        let k = members.len();
        let n_train = (0.70 * k as f64).round() as usize;
        let n_val = (0.15 * k as f64).round() as usize;
        for (rank, &i) in members.iter().enumerate() {
            split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }
    split
}

/// Where to find a tabular dataset and which columns carry labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: std::path::PathBuf,
    pub target_col: String,
    pub protected_col: String,
    #[serde(default)]
    pub split_col: Option<String>,
    /// Seed for the stratified split when `split_col` is absent.
    #[serde(default)]
    pub split_seed: u64,
}

fn parse_binary(value: &str, row: usize, column: &str) -> Result<u8> {
    match value.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            row,
            column: column.to_string(),
            reason: format!("expected 0 or 1, found `{other}`"),
        }),
    }
}

/// Loads a CSV file. Feature columns are every remaining column whose first
/// data value parses as a number; non-numeric columns are skipped.
pub fn load_csv(source: &CsvSource) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&source.path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let target_idx = find(&source.target_col)?;
    let protected_idx = find(&source.protected_col)?;
    let split_idx = source.split_col.as_deref().map(find).transpose()?;

    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let candidate: Vec<usize> = (0..header.len())
        .filter(|&j| j != target_idx && j != protected_idx && Some(j) != split_idx)
        .collect();
    let feature_cols: Vec<usize> = match records.first() {
        Some(first) => candidate
            .into_iter()
            .filter(|&j| first.get(j).is_some_and(|v| v.trim().parse::<f64>().is_ok()))
            .collect(),
        None => candidate,
    };

    let d = feature_cols.len();
    let mut raw = Vec::with_capacity(records.len() * d);
    let mut targets = Vec::with_capacity(records.len());
    let mut protected = Vec::with_capacity(records.len());
    let mut split = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let field = |j: usize| {
            rec.get(j).ok_or_else(|| Error::Parse {
                row,
                column: header[j].clone(),
                reason: "missing field".into(),
            })
        };
        for &j in &feature_cols {
            let v: f64 = field(j)?.trim().parse().map_err(|_| Error::Parse {
                row,
                column: header[j].clone(),
                reason: "not a number".into(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[j].clone(),
                    reason: "non-finite value".into(),
                });
            }
            raw.push(v);
        }
        targets.push(parse_binary(field(target_idx)?, row, &header[target_idx])?);
        protected.push(parse_binary(field(protected_idx)?, row, &header[protected_idx])?);
        if let Some(j) = split_idx {
            let tag = field(j)?.trim();
            split.push(tag.parse::<Split>().map_err(|reason| Error::Parse {
                row,
                column: header[j].clone(),
                reason,
            })?);
        }
    }
    if split_idx.is_none() {
        split = stratified_split(&targets, &protected, source.split_seed);
    }
    let names = Columns {
        feature_names: feature_cols.iter().map(|&j| header[j].clone()).collect(),
        target_name: header[target_idx].clone(),
        protected_name: header[protected_idx].clone(),
    };
    let ds = Dataset::assemble(raw, targets, protected, split, names)?;
    ds.validate_values()?;
    Ok(ds)
}

/// Produces one epoch of stratified mini-batches over a split.
///
/// Every batch holds the split-level share of `s = 1` rows up to one sample
/// (cumulative rounding), all rows appear exactly once, and the order is a
/// deterministic function of `(seed, epoch)`.
#[derive(Clone, Debug)]
pub struct StratifiedBatcher {
    ones: Vec<usize>,
    zeros: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl StratifiedBatcher {
    pub fn new(ds: &Dataset, split: Split, batch_size: usize, seed: u64) -> Result<Self> {
        let idx = ds.indices(split);
        Self::from_indices(&idx, ds.protected(), batch_size, seed)
    }

    pub fn from_indices(indices: &[usize], protected: &[u8], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::argument("batch_size must be positive"));
        }
        if batch_size > indices.len() {
            return Err(Error::argument(format!(
                "batch_size {batch_size} exceeds split size {}",
                indices.len()
            )));
        }
        let (ones, zeros) = indices.iter().partition(|&&i| protected[i] == 1);
        Ok(Self {
            ones,
            zeros,
            batch_size,
            seed,
        })
    }

    pub fn n_batches(&self) -> usize {
        let n = self.ones.len() + self.zeros.len();
        n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(epoch.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)),
        );
        let mut ones = self.ones.clone();
        let mut zeros = self.zeros.clone();
        ones.shuffle(&mut rng);
        zeros.shuffle(&mut rng);

        let n = ones.len() + zeros.len();
        let p = ones.len() as f64 / n as f64;
        let mut batches = Vec::with_capacity(self.n_batches());
        let (mut start, mut ones_used, mut zeros_used) = (0usize, 0usize, 0usize);
        while start < n {
            let end = (start + self.batch_size).min(n);
            let ones_target = ((p * end as f64).round() as usize).min(ones.len());
            let k1 = ones_target - ones_used;
            let k0 = (end - start) - k1;
            let mut batch = Vec::with_capacity(end - start);
            batch.extend_from_slice(&ones[ones_used..ones_used + k1]);
            batch.extend_from_slice(&zeros[zeros_used..zeros_used + k0]);
            batch.shuffle(&mut rng);
            batches.push(batch);
            ones_used += k1;
            zeros_used += k0;
            start = end;
        }
        batches
    }
}

/// First-epoch stratified batches for `split`.
pub fn stratified_batches(ds: &Dataset, split: Split, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    Ok(StratifiedBatcher::new(ds, split, batch_size, seed)?.epoch(0))
}
