//! Multilayer perceptron pruning classifier.
//!
//! Output index 0 is the prune class, index 1 the preserve class.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::rng::{sha256_hex, stream};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HIDDEN: [usize; 3] = [32, 64, 16];
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Prune,
    Preserve,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Prune => 0,
            Label::Preserve => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    /// `weights[k]` is `dims[k+1] x dims[k]`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub schema: String,
}

impl MlpModel {
    /// Uniform initialization in `+-1/sqrt(fan_in)`.
    pub fn new(dims: &[usize], schema: impl Into<String>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(dims, schema)?;
        let mut rng = stream(seed, "init");
        for k in 0..m.layers() {
            let r = 1.0 / (dims[k] as f64).sqrt();
            for v in m.weights[k].iter_mut().chain(m.biases[k].iter_mut()) {
                *v = rng.gen_range(-r..=r);
            }
        }
        Ok(m)
    }

    /// `[d_in, 32, 64, 16, 2]`.
    pub fn standard(d_in: usize, schema: impl Into<String>, seed: u64) -> Result<Self> {
        let mut dims = vec![d_in];
        dims.extend(HIDDEN);
        dims.push(2);
        Self::new(&dims, schema, seed)
    }

    pub fn zeros(dims: &[usize], schema: impl Into<String>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) || *dims.last().expect("len >= 2") != 2 {
            return Err(Error::Config(format!("bad layer dimensions {dims:?}")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|d| vec![0.0; d[0] * d[1]]).collect(),
            biases: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            schema: schema.into(),
        })
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.dims.len() >= 2
            && self.dims.last() == Some(&2)
            && self.weights.len() == self.layers()
            && self.biases.len() == self.layers()
            && (0..self.layers()).all(|k| {
                self.weights[k].len() == self.dims[k] * self.dims[k + 1]
                    && self.biases[k].len() == self.dims[k + 1]
            });
        if !ok {
            return Err(Error::Format("inconsistent layer dimensions".into()));
        }
        if self.params().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.layers());
        for k in 0..self.layers() {
            let (d_in, d_out) = (self.dims[k], self.dims[k + 1]);
            let w = &self.weights[k];
            let z: Vec<f64> = (0..d_out)
                .map(|o| {
                    let row = &w[o * d_in..(o + 1) * d_in];
                    let s: f64 = match out.last() {
                        None => row.iter().zip(x).map(|(a, b)| a * b).sum(),
                        Some(prev) => row.iter().zip(prev).map(|(a, b)| a * b.max(0.0)).sum(),
                    };
                    s + self.biases[k][o]
                })
                .collect();
            out.push(z);
        }
        out
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let z = self.pre_activations(x);
        let l = z.last().expect("at least one layer");
        [l[0], l[1]]
    }

    /// Class probabilities without a schema check.
    pub fn probabilities(&self, x: &[f64]) -> [f64; 2] {
        softmax2(self.logits(x))
    }

    /// Loss and its gradient, in `params()` order.
    pub fn loss_and_grad(&self, x: &[f64], y: Label, w: &ClassWeights) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.param_count()];
        let loss = self.accumulate(x, y, w, 1.0, &mut g);
        (loss, g)
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers());
        let mut acc = 0;
        for k in 0..self.layers() {
            off.push(acc);
            acc += self.weights[k].len() + self.biases[k].len();
        }
        off
    }

    /// Add `scale * grad` into `g`; returns the unscaled loss.
    fn accumulate(&self, x: &[f64], y: Label, w: &ClassWeights, scale: f64, g: &mut [f64]) -> f64 {
        let z = self.pre_activations(x);
        let e = softmax2([z[z.len() - 1][0], z[z.len() - 1][1]]);
        let wy = w.w()[y.index()];
        let loss = weighted_ce_loss(e, y, w);
        // d loss / d logits = w_y (e - onehot); the log clamp is ignored here.
        let mut delta: Vec<f64> = (0..2)
            .map(|c| wy * (e[c] - (c == y.index()) as u8 as f64) * scale)
            .collect();
        let off = self.offsets();
        for k in (0..self.layers()).rev() {
            let d_in = self.dims[k];
            let input: Vec<f64> = if k == 0 {
                x.to_vec()
            } else {
                z[k - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let base = off[k];
            let nw = self.weights[k].len();
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g[base + o * d_in..base + (o + 1) * d_in];
                for (gi, a) in row.iter_mut().zip(&input) {
                    *gi += d * a;
                }
                g[base + nw + o] += d;
            }
            if k > 0 {
                let w = &self.weights[k];
                delta = (0..d_in)
                    .map(|i| {
                        if z[k - 1][i] <= 0.0 {
                            return 0.0;
                        }
                        delta.iter().enumerate().map(|(o, d)| d * w[o * d_in + i]).sum()
                    })
                    .collect();
            }
        }
        loss
    }

    fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for k in 0..self.layers() {
            let nw = self.weights[k].len();
            if i < nw {
                return &mut self.weights[k][i];
            }
            i -= nw;
            let nb = self.biases[k].len();
            if i < nb {
                return &mut self.biases[k][i];
            }
            i -= nb;
        }
        panic!("parameter index out of range")
    }

    fn step(&mut self, g: &[f64], lr: f64) {
        for (p, gi) in self.params_mut().zip(g) {
            *p -= lr * gi;
        }
    }
}

/// Numerically stable two-class softmax.
pub fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let a = (l[0] - m).exp();
    let b = (l[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

pub fn forward(model: &MlpModel, f: &FeatureVector) -> Result<[f64; 2]> {
    if f.schema != model.schema || f.values.len() != model.input_dim() {
        return Err(Error::SchemaMismatch {
            expected: format!("{} ({} inputs)", model.schema, model.input_dim()),
            found: format!("{} ({} inputs)", f.schema, f.values.len()),
        });
    }
    Ok(model.probabilities(&f.values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub o1: [f64; 2],
    pub o2: [f64; 2],
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            o1: [1.0, 1.0],
            o2: [1.0, 1.0],
        }
    }
}

impl ClassWeights {
    /// Smallest `o1` entry, so a single-class dataset keeps both weights positive.
    pub const FLOOR: f64 = 1e-3;

    /// `o1 = (#preserve / #total, 1 - #preserve / #total)`: the rarer class
    /// gets the larger weight.
    pub fn from_counts(preserve: usize, total: usize, o2: [f64; 2]) -> Result<Self> {
        if total == 0 || preserve > total {
            return Err(Error::Precondition(format!("bad class counts {preserve}/{total}")));
        }
        if o2.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("o2 entries must be positive".into()));
        }
        let r = preserve as f64 / total as f64;
        Ok(Self {
            o1: [r.max(Self::FLOOR), (1.0 - r).max(Self::FLOOR)],
            o2,
        })
    }

    pub fn w(&self) -> [f64; 2] {
        [self.o1[0] * self.o2[0], self.o1[1] * self.o2[1]]
    }
}

/// `-w[y] ln e[y]`, with `e[y]` clamped below at `1e-12`.
pub fn weighted_ce_loss(e: [f64; 2], y: Label, w: &ClassWeights) -> f64 {
    let i = y.index();
    -w.w()[i] * e[i].max(LOG_CLAMP).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// 0 means full batch.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.5,
            batch_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean weighted loss of each epoch, measured while training.
    pub epoch_loss: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Mini-batch gradient descent on the mean weighted loss of each batch.
pub fn train(
    model: &MlpModel,
    data: &[(&[f64], Label)],
    weights: &ClassWeights,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let mut m = model.clone();
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((m, report));
    }
    if data.is_empty() {
        return Err(Error::Precondition("training needs at least one sample".into()));
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != m.input_dim()) {
        return Err(Error::SchemaMismatch {
            expected: format!("{} inputs", m.input_dim()),
            found: format!("{} inputs", x.len()),
        });
    }
    let mut rng = stream(seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    let mut g = vec![0.0; m.param_count()];
    for epoch in 0..cfg.epochs {
        if bs < data.len() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for batch in order.chunks(bs) {
            g.iter_mut().for_each(|v| *v = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = data[i];
                total += m.accumulate(x, y, weights, scale, &mut g);
            }
            m.step(&g, cfg.lr);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || m.params().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: loss {mean}, lr {}, {} samples",
                cfg.lr,
                data.len()
            )));
        }
        report.epoch_loss.push(mean);
    }
    Ok((m, report))
}

/// Relative error between the analytic gradient and central differences
/// with step `h`, measured as `||g - g_fd|| / max(||g||, ||g_fd||)`.
pub fn gradient_check(model: &MlpModel, x: &[f64], y: Label, w: &ClassWeights, h: f64) -> f64 {
    let (_, g) = model.loss_and_grad(x, y, w);
    let mut probe = model.clone();
    let n = g.len();
    let mut fd = vec![0.0; n];
    for (i, fdi) in fd.iter_mut().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let lp = weighted_ce_loss(probe.probabilities(x), y, w);
        *probe.param_mut(i) = orig - h;
        let lm = weighted_ce_loss(probe.probabilities(x), y, w);
        *probe.param_mut(i) = orig;
        *fdi = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(fd.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Prune,
    Preserve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePolicy {
    pub model: MlpModel,
    pub threshold: f64,
}

impl PrunePolicy {
    pub fn new(model: MlpModel, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self { model, threshold })
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(self.model.clone(), threshold)
    }

    pub fn schema(&self) -> &str {
        &self.model.schema
    }

    pub fn prune_probability(&self, f: &FeatureVector) -> Result<f64> {
        Ok(forward(&self.model, f)?[0])
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<Decision> {
        Ok(decide(self.prune_probability(f)?, self.threshold))
    }

    /// A model whose prune probability is `sigmoid(2 * bias)` on every input.
    pub fn constant(d_in: usize, schema: &str, bias: f64, threshold: f64) -> Result<Self> {
        let mut dims = vec![d_in];
        dims.extend(HIDDEN);
        dims.push(2);
        let mut m = MlpModel::zeros(&dims, schema)?;
        let last = m.layers() - 1;
        m.biases[last] = vec![bias, -bias];
        Self::new(m, threshold)
    }
}

pub fn check_threshold(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold {t} outside [0, 1)")))
    }
}

/// Prune iff the prune probability strictly exceeds the threshold.
pub fn decide(prune_probability: f64, threshold: f64) -> Decision {
    if prune_probability > threshold {
        Decision::Prune
    } else {
        Decision::Preserve
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    schema: String,
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    threshold: Option<f64>,
    #[serde(default)]
    digest: String,
}

impl ModelFile {
    fn content_digest(&self) -> String {
        let body = serde_json::json!({
            "version": self.version,
            "schema": self.schema,
            "dims": self.dims,
            "weights": self.weights,
            "biases": self.biases,
            "threshold": self.threshold,
        });
        sha256_hex(body.to_string().as_bytes())
    }
}

fn to_file(m: &MlpModel, threshold: Option<f64>) -> ModelFile {
    let mut f = ModelFile {
        version: MODEL_FORMAT_VERSION,
        schema: m.schema.clone(),
        dims: m.dims.clone(),
        weights: m.weights.clone(),
        biases: m.biases.clone(),
        threshold,
        digest: String::new(),
    };
    f.digest = f.content_digest();
    f
}

fn from_file(text: &str, expect_schema: Option<&str>, expect_d_in: Option<usize>) -> Result<(MlpModel, Option<f64>)> {
    let f: ModelFile = serde_json::from_str(text)?;
    if f.version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            f.version
        )));
    }
    if f.digest != f.content_digest() {
        return Err(Error::Format("model digest does not match its contents".into()));
    }
    if let Some(s) = expect_schema {
        if f.schema != s {
            return Err(Error::SchemaMismatch {
                expected: s.to_string(),
                found: f.schema,
            });
        }
    }
    if let Some(d) = expect_d_in {
        if f.dims.first() != Some(&d) {
            return Err(Error::SchemaMismatch {
                expected: format!("{d} inputs"),
                found: format!("{:?} inputs", f.dims.first()),
            });
        }
    }
    let m = MlpModel {
        dims: f.dims,
        weights: f.weights,
        biases: f.biases,
        schema: f.schema,
    };
    m.check()?;
    Ok((m, f.threshold))
}

/// Digest a model the way its file records it.
pub fn model_digest(m: &MlpModel) -> String {
    to_file(m, None).digest
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&to_file(self, None))?)
    }

    pub fn from_json(text: &str, expect_schema: Option<&str>, expect_d_in: Option<usize>) -> Result<Self> {
        Ok(from_file(text, expect_schema, expect_d_in)?.0)
    }
}

impl PrunePolicy {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&to_file(&self.model, Some(self.threshold)))?)
    }

    pub fn from_json(text: &str, expect_schema: Option<&str>, expect_d_in: Option<usize>) -> Result<Self> {
        let (m, t) = from_file(text, expect_schema, expect_d_in)?;
        Self::new(m, t.unwrap_or(0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn fv(values: Vec<f64>, schema: &str) -> FeatureVector {
        FeatureVector {
            values,
            schema: schema.into(),
        }
    }

    #[test]
    fn softmax_cases() {
        let m = MlpModel::zeros(&[3, 4, 2], "s").unwrap();
        assert_eq!(forward(&m, &fv(vec![1.0, 2.0, 3.0], "s")).unwrap(), [0.5, 0.5]);
        let e = softmax2([3f64.ln(), 0.0]);
        assert!((e[0] - 0.75).abs() < 1e-15 && (e[1] - 0.25).abs() < 1e-15);
        let s = softmax2([3f64.ln() + 123.0, 123.0]);
        assert!((s[0] - e[0]).abs() < 1e-12);
        assert!(forward(&m, &fv(vec![1.0, 2.0, 3.0], "other")).is_err());
        assert!(forward(&m, &fv(vec![1.0, 2.0], "s")).is_err());
    }

    #[test]
    fn loss_cases() {
        let w = ClassWeights::default();
        assert!(weighted_ce_loss([1.0, 0.0], Label::Prune, &w).abs() < 1e-15);
        let w12 = ClassWeights { o1: [1.0, 2.0], o2: [1.0, 1.0] };
        assert!((weighted_ce_loss([0.5, 0.5], Label::Preserve, &w12) - 2.0 * 2f64.ln()).abs() < 1e-15);
        let clamped = weighted_ce_loss([1.0, 0.0], Label::Preserve, &w);
        assert!((clamped + LOG_CLAMP.ln()).abs() < 1e-9);
        let cw = ClassWeights::from_counts(20, 200, [1.0, 1.0]).unwrap();
        assert!((cw.o1[0] - 0.1).abs() < 1e-15 && (cw.o1[1] - 0.9).abs() < 1e-15);
        let single = ClassWeights::from_counts(0, 10, [1.0, 1.0]).unwrap();
        assert!(single.w().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn predict_boundaries() {
        assert_eq!(decide(0.6, 0.5), Decision::Prune);
        assert_eq!(decide(0.6, 1.0 - 0.5 * 0.8f64.powi(2)), Decision::Preserve);
        assert_eq!(decide(0.5, 0.5), Decision::Preserve);
        assert!(check_threshold(1.0).is_err());
        assert!(check_threshold(-0.1).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = MlpModel::standard(3, "s", 1).unwrap();
        let x = [0.1, 0.2, 0.3];
        let data = [(&x[..], Label::Prune)];
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (out, r) = train(&m, &data, &ClassWeights::default(), &cfg, 9).unwrap();
        assert_eq!(out, m);
        assert!(r.final_loss().is_none());
    }

    #[test]
    fn duplicated_full_batch_matches() {
        let m = MlpModel::standard(2, "s", 3).unwrap();
        let xs: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 / 10.0 - 1.0, ((i * 7) % 5) as f64 / 5.0]).collect();
        let data: Vec<(&[f64], Label)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (&x[..], if i % 3 == 0 { Label::Preserve } else { Label::Prune }))
            .collect();
        let doubled: Vec<_> = data.iter().chain(data.iter()).copied().collect();
        let cfg = TrainConfig { epochs: 7, lr: 0.05, batch_size: 0 };
        let w = ClassWeights::default();
        let (a, _) = train(&m, &data, &w, &cfg, 1).unwrap();
        let (b, _) = train(&m, &doubled, &w, &cfg, 1).unwrap();
        for (p, q) in a.params().zip(b.params()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let m = MlpModel::standard(2, "s", 3).unwrap();
        let xs: Vec<[f64; 2]> = (0..50).map(|i| [(i as f64).sin(), (i as f64).cos()]).collect();
        let data: Vec<(&[f64], Label)> = xs
            .iter()
            .map(|x| (&x[..], if x[0] > 0.0 { Label::Preserve } else { Label::Prune }))
            .collect();
        let cfg = TrainConfig { epochs: 5, lr: 1e-3, batch_size: 32 };
        let a = train(&m, &data, &ClassWeights::default(), &cfg, 4).unwrap();
        let b = train(&m, &data, &ClassWeights::default(), &cfg, 4).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = train(&m, &data, &ClassWeights::default(), &cfg, 5).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn diverging_training_reports() {
        let m = MlpModel::standard(1, "s", 3).unwrap();
        let x = [1e200];
        let data = [(&x[..], Label::Prune)];
        let cfg = TrainConfig { epochs: 3, lr: 1e10, batch_size: 0 };
        assert!(matches!(
            train(&m, &data, &ClassWeights::default(), &cfg, 0),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(0, "gradcheck");
        for t in 0..10 {
            let m = MlpModel::standard(4, "s", t).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = if t % 2 == 0 { Label::Prune } else { Label::Preserve };
            let w = ClassWeights { o1: [0.3, 0.7], o2: [1.0, 2.0] };
            assert!(gradient_check(&m, &x, y, &w, 1e-5) <= 1e-4);
        }
    }

    #[test]
    fn save_load_and_refusals() {
        let m = MlpModel::standard(3, "schema-a", 7).unwrap();
        let p = PrunePolicy::new(m, 0.6).unwrap();
        let text = p.to_json().unwrap();
        let q = PrunePolicy::from_json(&text, Some("schema-a"), Some(3)).unwrap();
        assert_eq!(p, q);
        let f = fv(vec![0.3, -0.7, 1.1], "schema-a");
        assert_eq!(p.prune_probability(&f).unwrap(), q.prune_probability(&f).unwrap());

        let tampered = text.replace("schema-a", "schema-b");
        assert!(PrunePolicy::from_json(&tampered, None, None).is_err());
        assert!(PrunePolicy::from_json(&text, Some("schema-b"), None).is_err());
        assert!(PrunePolicy::from_json(&text, None, Some(4)).is_err());
        let old = text.replacen("\"version\": 1", "\"version\": 0", 1);
        assert!(PrunePolicy::from_json(&old, None, None).is_err());
    }

    proptest! {
        #[test]
        fn threshold_monotone(seed in 0u64..1000, x in proptest::collection::vec(-3.0f64..3.0, 3), a in 0.0f64..0.999, b in 0.0f64..0.999) {
            let m = MlpModel::standard(3, "s", seed).unwrap();
            let f = fv(x, "s");
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let p_hi = PrunePolicy::new(m.clone(), hi).unwrap().predict(&f).unwrap();
            let p_lo = PrunePolicy::new(m, lo).unwrap().predict(&f).unwrap();
            if p_hi == Decision::Prune {
                prop_assert_eq!(p_lo, Decision::Prune);
            }
        }

        #[test]
        fn softmax_shift_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -100.0f64..100.0) {
            let e = softmax2([a, b]);
            let s = softmax2([a + c, b + c]);
            prop_assert!((e[0] - s[0]).abs() < 1e-12);
            prop_assert!((e[0] + e[1] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn equal_class_weights_scale_loss_and_gradient(seed in 0u64..200, c in 0.01f64..10.0) {
            let m = MlpModel::standard(2, "s", seed).unwrap();
            let x = [0.4, -0.2];
            let w1 = ClassWeights { o1: [1.0, 1.0], o2: [1.0, 1.0] };
            let wc = ClassWeights { o1: [c, c], o2: [1.0, 1.0] };
            let (l1, g1) = m.loss_and_grad(&x, Label::Preserve, &w1);
            let (lc, gc) = m.loss_and_grad(&x, Label::Preserve, &wc);
            prop_assert!((lc - c * l1).abs() <= 1e-12 * (1.0 + lc.abs()));
            for (a, b) in g1.iter().zip(&gc) {
                prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
