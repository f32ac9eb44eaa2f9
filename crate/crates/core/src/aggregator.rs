//! Fusion of sub-model features at the central node: concatenate, project
//! with `W` and `b`, average-pool over tokens, then apply a linear task head.
//! Also the averaging and majority-vote baselines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::booster::{argmax, log_softmax, softmax, Split, ToyClassifier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationModule {
    /// `d_agg x d_i`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `classes x d_i`.
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

impl AggregationModule {
    pub fn new<R: Rng + ?Sized>(d_agg: usize, d_i: usize, classes: usize, rng: &mut R) -> Self {
        let proj = Normal::new(0.0, (1.0 / d_agg as f64).sqrt()).expect("finite std");
        let head = Normal::new(0.0, (1.0 / d_i as f64).sqrt()).expect("finite std");
        Self {
            w: DMatrix::from_fn(d_agg, d_i, |_, _| proj.sample(rng)),
            b: DVector::zeros(d_i),
            head_w: DMatrix::from_fn(classes, d_i, |_, _| head.sample(rng)),
            head_b: DVector::zeros(classes),
        }
    }

    /// Identity projection with a zero head; for checking the pooling path.
    pub fn identity(dim: usize, classes: usize) -> Self {
        Self {
            w: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
            head_w: DMatrix::zeros(classes, dim),
            head_b: DVector::zeros(classes),
        }
    }

    pub fn d_agg(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_i(&self) -> usize {
        self.w.ncols()
    }

    pub fn classes(&self) -> usize {
        self.head_w.nrows()
    }

    pub fn logits(&self, pooled: &DVector<f64>) -> DVector<f64> {
        &self.head_w * pooled + &self.head_b
    }
}

fn concat(features: &[DMatrix<f64>], d_agg: usize) -> Result<DMatrix<f64>> {
    let first = features.first().ok_or(Error::EmptyEnsemble)?;
    let s = first.nrows();
    if features.iter().any(|f| f.nrows() != s) {
        return Err(Error::ShapeMismatch("sub-model features differ in token count".into()));
    }
    let total: usize = features.iter().map(|f| f.ncols()).sum();
    if total != d_agg {
        return Err(Error::ShapeMismatch(format!(
            "concatenated width {total} does not match d_agg {d_agg}"
        )));
    }
    let mut out = DMatrix::zeros(s, total);
    let mut col = 0;
    for f in features {
        out.view_mut((0, col), (s, f.ncols())).copy_from(f);
        col += f.ncols();
    }
    Ok(out)
}

/// `Pool(Concat(X_1..X_N) W + b)`: one `d_i` vector, the mean over tokens.
pub fn aggregate(features: &[DMatrix<f64>], module: &AggregationModule) -> Result<DVector<f64>> {
    let x = concat(features, module.d_agg())?;
    let projected = x * &module.w;
    let s = projected.nrows() as f64;
    let pooled = projected.row_sum().transpose() / s;
    Ok(pooled + &module.b)
}

fn sample_features(models: &[ToyClassifier], x: &[f64]) -> Vec<DMatrix<f64>> {
    models
        .iter()
        .map(|m| {
            let f = m.features(x);
            DMatrix::from_row_slice(1, f.len(), &f)
        })
        .collect()
}

/// Aggregated logits for one input, using frozen sub-models' hidden features as tokens of length 1.
pub fn aggregate_logits(models: &[ToyClassifier], module: &AggregationModule, x: &[f64]) -> Result<DVector<f64>> {
    Ok(module.logits(&aggregate(&sample_features(models, x), module)?))
}

/// Full-batch gradient descent on mean cross-entropy of the aggregated logits.
/// Sub-models are read-only. Returns the trained module and the loss before each step.
pub fn train_aggregator(
    module: &AggregationModule,
    models: &[ToyClassifier],
    data: &Split,
    epochs: usize,
    lr: f64,
) -> Result<(AggregationModule, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    let inputs: Vec<DVector<f64>> = data
        .xs
        .iter()
        .map(|x| {
            let rows = concat(&sample_features(models, x), module.d_agg())?;
            Ok(rows.row_mean().transpose())
        })
        .collect::<Result<_>>()?;
    if data.ys.iter().any(|&y| y >= module.classes()) {
        return Err(Error::ShapeMismatch("label outside the head's class range".into()));
    }
    let mut m = module.clone();
    let n = data.len() as f64;
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut gw = DMatrix::zeros(m.d_agg(), m.d_i());
        let mut gb = DVector::zeros(m.d_i());
        let mut ghw = DMatrix::zeros(m.classes(), m.d_i());
        let mut ghb = DVector::zeros(m.classes());
        let mut loss = 0.0;
        for (xbar, &y) in inputs.iter().zip(&data.ys) {
            let z = m.w.tr_mul(xbar) + &m.b;
            let logits = m.logits(&z);
            let ls = log_softmax(logits.as_slice());
            loss -= ls[y];
            let mut g = DVector::from_iterator(ls.len(), ls.iter().map(|l| l.exp()));
            g[y] -= 1.0;
            ghw += &g * z.transpose();
            ghb += &g;
            let dz = m.head_w.tr_mul(&g);
            gw += xbar * dz.transpose();
            gb += dz;
        }
        losses.push(loss / n);
        let step = lr / n;
        m.w -= gw * step;
        m.b -= gb * step;
        m.head_w -= ghw * step;
        m.head_b -= ghb * step;
    }
    Ok((m, losses))
}

pub fn aggregate_accuracy(models: &[ToyClassifier], module: &AggregationModule, data: &Split) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        if argmax(aggregate_logits(models, module, x)?.as_slice()) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Elementwise mean of the members' softmax probabilities.
pub fn ensemble_average(logits: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = logits.first().ok_or(Error::EmptyEnsemble)?;
    if logits.iter().any(|l| l.len() != first.len()) {
        return Err(Error::ShapeMismatch("ensemble members differ in class count".into()));
    }
    let mut out = vec![0.0; first.len()];
    for l in logits {
        out.iter_mut().zip(softmax(l)).for_each(|(o, p)| *o += p);
    }
    let k = logits.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Ok(out)
}

/// Most common prediction; the lowest class index wins ties.
pub fn ensemble_majority(predictions: &[usize]) -> Result<usize> {
    let top = *predictions.iter().max().ok_or(Error::EmptyEnsemble)?;
    let mut counts = vec![0usize; top + 1];
    predictions.iter().for_each(|&p| counts[p] += 1);
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

pub fn ensemble_average_accuracy(models: &[ToyClassifier], data: &Split) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let logits: Vec<Vec<f64>> = models.iter().map(|m| m.logits(x)).collect();
        if argmax(&ensemble_average(&logits)?) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

pub fn ensemble_majority_accuracy(models: &[ToyClassifier], data: &Split) -> Result<f64> {
    let mut hits = 0usize;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let preds: Vec<usize> = models.iter().map(|m| m.predict(x)).collect();
        if ensemble_majority(&preds)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Randomly initialized module sized for `models` with a `d_i`-wide projection.
pub fn init_for(models: &[ToyClassifier], d_i: usize, classes: usize, seed: u64) -> AggregationModule {
    let d_agg = models.iter().map(ToyClassifier::hidden).sum();
    AggregationModule::new(d_agg, d_i, classes, &mut ChaCha8Rng::seed_from_u64(seed))
}
