//! A small feed-forward acoustic model with a Geo-vector input path and one
//! output head per dialect region, trained by plain gradient descent with a
//! per-group freeze mask.
//!
//! The network computes
//!
//! ```text
//! h1 = tanh(W1 x + b1)
//! h2 = tanh(W2 h1 + b2) + G g + c      (g: one-hot dialect region)
//! y  = softmax(Wd h2 + bd)             (d: the active region of g)
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::georegistry::{DialectRegion, NUM_REGIONS};

const REGIONS: usize = NUM_REGIONS as usize;

#[derive(Debug, Error, PartialEq)]
pub enum GeoAmError {
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("dialect region {0} is outside 1..=10")]
    InvalidDialect(u8),
    #[error("label {label} is outside the {units} output units")]
    InvalidLabel { label: usize, units: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("inconsistent batch: {0}")]
    Batch(String),
    #[error("learning rate {0} must be non-negative and finite")]
    InvalidRate(f64),
    #[error("unknown parameter group '{0}'")]
    UnknownGroup(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One-hot encoding of a dialect region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GeoVector(DialectRegion);

impl GeoVector {
    pub fn new(region: DialectRegion) -> Result<Self, GeoAmError> {
        if (1..=NUM_REGIONS).contains(&region.0) {
            Ok(GeoVector(region))
        } else {
            Err(GeoAmError::InvalidDialect(region.0))
        }
    }

    pub fn region(self) -> DialectRegion {
        self.0
    }

    pub fn active(self) -> usize {
        self.0.index()
    }

    pub fn one_hot(self) -> [f64; REGIONS] {
        let mut v = [0.0; REGIONS];
        v[self.active()] = 1.0;
        v
    }
}

/// y = W x + b, W stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Affine {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = scale / (cols as f64).sqrt();
        let mut a = Affine::zeros(rows, cols);
        for w in &mut a.weight {
            *w = rng.gen_range(-bound..bound);
        }
        a
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let row = &self.weight[i * self.cols..(i + 1) * self.cols];
                self.bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates dW += dy xᵀ, db += dy and returns Wᵀ dy.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for i in 0..self.rows {
            let g = dy[i];
            grad.bias[i] += g;
            let row = &self.weight[i * self.cols..(i + 1) * self.cols];
            let grow = &mut grad.weight[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                grow[j] += g * x[j];
                dx[j] += g * row[j];
            }
        }
        dx
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyAmConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub units: usize,
    /// Uniform init range is ±init_scale/√fan_in.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ToyAmConfig {
    fn default() -> Self {
        ToyAmConfig {
            input_dim: 16,
            hidden: 64,
            units: 12,
            init_scale: 1.0,
            seed: 1,
        }
    }
}

/// Names of the parameter groups: `layer1`, `layer2`, `geo`, `head1`..`head10`.
pub fn group_names() -> Vec<String> {
    let mut v: Vec<String> = ["layer1", "layer2", "geo"].iter().map(|s| s.to_string()).collect();
    v.extend((1..=REGIONS).map(|d| format!("head{d}")));
    v
}

/// Parameter groups excluded from updates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn all() -> Self {
        FreezeMask {
            frozen: group_names().into_iter().collect(),
        }
    }

    /// Everything frozen except the head of `region`.
    pub fn only_head(region: DialectRegion) -> Self {
        let mut m = FreezeMask::all();
        m.frozen.remove(&format!("head{}", region.0));
        m
    }

    pub fn freeze(&mut self, group: &str) -> Result<(), GeoAmError> {
        if !group_names().iter().any(|g| g == group) {
            return Err(GeoAmError::UnknownGroup(group.to_string()));
        }
        self.frozen.insert(group.to_string());
        Ok(())
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.contains(group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGeoAm {
    pub layer1: Affine,
    pub layer2: Affine,
    pub geo: Affine,
    pub heads: Vec<Affine>,
}

/// Activations kept for the backward pass.
struct Trace {
    h1: Vec<f64>,
    t2: Vec<f64>,
    z: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ToyGeoAm {
    pub fn new(cfg: &ToyAmConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = cfg.init_scale;
        let layer1 = Affine::random(cfg.hidden, cfg.input_dim, s, &mut rng);
        let layer2 = Affine::random(cfg.hidden, cfg.hidden, s, &mut rng);
        let geo = Affine::random(cfg.hidden, REGIONS, s, &mut rng);
        let head = Affine::random(cfg.units, cfg.hidden, s, &mut rng);
        ToyGeoAm {
            layer1,
            layer2,
            geo,
            heads: vec![head; REGIONS],
        }
    }

    /// All weights zero: every output is uniform.
    pub fn zeros(cfg: &ToyAmConfig) -> Self {
        ToyGeoAm {
            layer1: Affine::zeros(cfg.hidden, cfg.input_dim),
            layer2: Affine::zeros(cfg.hidden, cfg.hidden),
            geo: Affine::zeros(cfg.hidden, REGIONS),
            heads: vec![Affine::zeros(cfg.units, cfg.hidden); REGIONS],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.cols
    }

    pub fn num_units(&self) -> usize {
        self.heads[0].rows
    }

    pub fn group(&self, name: &str) -> Option<&Affine> {
        match name {
            "layer1" => Some(&self.layer1),
            "layer2" => Some(&self.layer2),
            "geo" => Some(&self.geo),
            _ => {
                let d: usize = name.strip_prefix("head")?.parse().ok()?;
                self.heads.get(d.checked_sub(1)?)
            }
        }
    }

    fn group_mut(&mut self, name: &str) -> Option<&mut Affine> {
        match name {
            "layer1" => Some(&mut self.layer1),
            "layer2" => Some(&mut self.layer2),
            "geo" => Some(&mut self.geo),
            _ => {
                let d: usize = name.strip_prefix("head")?.parse().ok()?;
                self.heads.get_mut(d.checked_sub(1)?)
            }
        }
    }

    /// Copies head `from` into every other head, as when dialect-specific
    /// top layers are initialized from a shared one.
    pub fn tie_heads(&mut self, from: DialectRegion) {
        let h = self.heads[from.index()].clone();
        for head in &mut self.heads {
            *head = h.clone();
        }
    }

    fn trace(&self, x: &[f64], geo: GeoVector) -> Trace {
        let h1: Vec<f64> = self.layer1.apply(x).into_iter().map(f64::tanh).collect();
        let t2: Vec<f64> = self.layer2.apply(&h1).into_iter().map(f64::tanh).collect();
        let g = self.geo.apply(&geo.one_hot());
        let z: Vec<f64> = t2.iter().zip(&g).map(|(a, b)| a + b).collect();
        let probs = softmax(&self.heads[geo.active()].apply(&z));
        Trace { h1, t2, z, probs }
    }

    /// Unit posteriors for one feature vector.
    pub fn forward(&self, x: &[f64], geo: GeoVector) -> Result<Vec<f64>, GeoAmError> {
        if x.len() != self.input_dim() {
            return Err(GeoAmError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.trace(x, geo).probs)
    }

    fn check(&self, batch: &ToyBatch) -> Result<(), GeoAmError> {
        if batch.is_empty() {
            return Err(GeoAmError::EmptyBatch);
        }
        for (x, &y) in batch.features.iter().zip(&batch.labels) {
            if x.len() != self.input_dim() {
                return Err(GeoAmError::Dimension {
                    expected: self.input_dim(),
                    got: x.len(),
                });
            }
            if y >= self.num_units() {
                return Err(GeoAmError::InvalidLabel {
                    label: y,
                    units: self.num_units(),
                });
            }
        }
        Ok(())
    }

    /// Mean cross-entropy (nats) over the batch.
    pub fn loss(&self, batch: &ToyBatch) -> Result<f64, GeoAmError> {
        self.check(batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let p = self.trace(&batch.features[i], batch.geo(i)).probs;
            total -= p[batch.labels[i]].ln();
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn gradient(&self, batch: &ToyBatch) -> Result<(f64, ToyGeoAm), GeoAmError> {
        self.check(batch)?;
        let mut grad = ToyGeoAm {
            layer1: Affine::zeros(self.layer1.rows, self.layer1.cols),
            layer2: Affine::zeros(self.layer2.rows, self.layer2.cols),
            geo: Affine::zeros(self.geo.rows, self.geo.cols),
            heads: vec![Affine::zeros(self.heads[0].rows, self.heads[0].cols); REGIONS],
        };
        let n = batch.len() as f64;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let x = &batch.features[i];
            let geo = batch.geo(i);
            let tr = self.trace(x, geo);
            let y = batch.labels[i];
            total -= tr.probs[y].ln();
            let mut dlogits: Vec<f64> = tr.probs.iter().map(|p| p / n).collect();
            dlogits[y] -= 1.0 / n;
            let d = geo.active();
            let dz = self.heads[d].backward(&tr.z, &dlogits, &mut grad.heads[d]);
            self.geo.backward(&geo.one_hot(), &dz, &mut grad.geo);
            let da2: Vec<f64> = dz.iter().zip(&tr.t2).map(|(g, t)| g * (1.0 - t * t)).collect();
            let dh1 = self.layer2.backward(&tr.h1, &da2, &mut grad.layer2);
            let da1: Vec<f64> = dh1.iter().zip(&tr.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
            self.layer1.backward(x, &da1, &mut grad.layer1);
        }
        Ok((total / n, grad))
    }

    /// One gradient-descent step on the unfrozen groups. Returns the loss
    /// before the update.
    pub fn train_step(&mut self, batch: &ToyBatch, rate: f64, mask: &FreezeMask) -> Result<f64, GeoAmError> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(GeoAmError::InvalidRate(rate));
        }
        let (loss, grad) = self.gradient(batch)?;
        for name in group_names() {
            if mask.is_frozen(&name) {
                continue;
            }
            let g = grad.group(&name).expect("known group");
            let p = self.group_mut(&name).expect("known group");
            for (v, dv) in p.values_mut().zip(g.values()) {
                *v -= rate * dv;
            }
        }
        Ok(loss)
    }

    /// Trains only the head of `region` on the samples of `region` in
    /// `batches`, `epochs` passes over them. Returns the per-step losses.
    pub fn adapt_dialect(
        &mut self,
        region: DialectRegion,
        batches: &[ToyBatch],
        rate: f64,
        epochs: usize,
    ) -> Result<Vec<f64>, GeoAmError> {
        GeoVector::new(region)?;
        let mask = FreezeMask::only_head(region);
        let own: Vec<ToyBatch> = batches
            .iter()
            .map(|b| b.filter_region(region))
            .filter(|b| !b.is_empty())
            .collect();
        if own.is_empty() {
            return Err(GeoAmError::EmptyBatch);
        }
        let mut losses = Vec::new();
        for _ in 0..epochs {
            for b in &own {
                losses.push(self.train_step(b, rate, &mask)?);
            }
        }
        Ok(losses)
    }

    /// Fraction of samples whose most probable unit is the label.
    pub fn accuracy(&self, batch: &ToyBatch) -> Result<f64, GeoAmError> {
        self.check(batch)?;
        let correct = (0..batch.len())
            .filter(|&i| {
                let p = self.trace(&batch.features[i], batch.geo(i)).probs;
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j);
                best == Some(batch.labels[i])
            })
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    /// Visits every scalar parameter of `group` by index.
    pub fn num_params(&self, group: &str) -> Option<usize> {
        self.group(group).map(|a| a.weight.len() + a.bias.len())
    }

    pub fn param(&self, group: &str, i: usize) -> Option<f64> {
        self.group(group)?.values().nth(i).copied()
    }

    pub fn set_param(&mut self, group: &str, i: usize, v: f64) -> Result<(), GeoAmError> {
        let p = self
            .group_mut(group)
            .ok_or_else(|| GeoAmError::UnknownGroup(group.to_string()))?
            .values_mut()
            .nth(i)
            .ok_or_else(|| GeoAmError::UnknownGroup(format!("{group}[{i}]")))?;
        *p = v;
        Ok(())
    }
}

/// A model together with its freeze mask, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ToyGeoAm,
    pub mask: FreezeMask,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GeoAmError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| GeoAmError::Checkpoint(e.to_string()))?;
        let m = &c.model;
        let shapes_ok = c.model.heads.len() == REGIONS
            && m.layer2.cols == m.layer1.rows
            && m.layer2.rows == m.layer1.rows
            && m.geo.rows == m.layer1.rows
            && m.geo.cols == REGIONS
            && m.heads.iter().all(|h| h.cols == m.layer1.rows && h.rows == m.heads[0].rows)
            && group_names().iter().all(|g| {
                let a = m.group(g).unwrap();
                a.weight.len() == a.rows * a.cols && a.bias.len() == a.rows
            });
        if !shapes_ok {
            return Err(GeoAmError::Checkpoint("inconsistent parameter shapes".into()));
        }
        Ok(c)
    }
}

/// Labelled feature vectors with their dialect regions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToyBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub regions: Vec<DialectRegion>,
}

impl ToyBatch {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, regions: Vec<DialectRegion>) -> Result<Self, GeoAmError> {
        if features.len() != labels.len() || labels.len() != regions.len() {
            return Err(GeoAmError::Batch("features, labels and regions differ in length".into()));
        }
        if let Some(d) = features.first().map(Vec::len) {
            if features.iter().any(|f| f.len() != d) {
                return Err(GeoAmError::Batch("feature vectors differ in length".into()));
            }
        }
        for r in &regions {
            GeoVector::new(*r)?;
        }
        Ok(ToyBatch {
            features,
            labels,
            regions,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn geo(&self, i: usize) -> GeoVector {
        GeoVector(self.regions[i])
    }

    pub fn filter_region(&self, region: DialectRegion) -> ToyBatch {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.regions[i] == region).collect();
        ToyBatch {
            features: keep.iter().map(|&i| self.features[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            regions: keep.iter().map(|&i| self.regions[i]).collect(),
        }
    }

    pub fn extend(&mut self, other: &ToyBatch) {
        self.features.extend(other.features.iter().cloned());
        self.labels.extend(&other.labels);
        self.regions.extend(&other.regions);
    }

    /// One sample per line: `region<TAB>label<TAB>f1 f2 ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let f: Vec<String> = self.features[i].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", self.regions[i].0, self.labels[i], f.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, GeoAmError> {
        let (mut features, mut labels, mut regions) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| GeoAmError::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err("expected region<TAB>label<TAB>features"));
            }
            regions.push(DialectRegion(f[0].parse().map_err(|_| err("bad region"))?));
            labels.push(f[1].parse().map_err(|_| err("bad label"))?);
            features.push(
                f[2].split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| err("bad feature value")))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        ToyBatch::new(features, labels, regions)
    }
}
