//! Sequential distillation of sub-models from a teacher with per-sample
//! reweighting between rounds, on small synthetic classification tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::{self, DecompositionPolicy, TransformerConfig};
use crate::error::{Error, Result};
use crate::evaluator::DegradationOracle;
use crate::nn::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub classes: usize,
    pub dims: usize,
    pub train: Split,
    pub val: Split,
}

impl ToyDataset {
    /// `classes * per_class` isotropic unit-variance Gaussian blobs whose
    /// centers sit evenly on a circle of radius `radius` in the first two
    /// coordinates; blob `k` belongs to class `k % classes`, so with
    /// `per_class > 1` the classes interleave around the circle.
    pub fn gaussian_clusters(
        classes: usize,
        per_class: usize,
        dims: usize,
        train: usize,
        val: usize,
        radius: f64,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 || per_class == 0 || dims < 2 || train < classes || val == 0 {
            return Err(Error::InvalidConfig(format!(
                "toy dataset needs >= 2 classes, >= 2 dims and >= classes samples \
                 (got R={classes}, p={dims}, M={train}, val={val})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut split = |n: usize| {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            let blobs = classes * per_class;
            for i in 0..n {
                let blob = i % blobs;
                let y = blob % classes;
                let angle = 2.0 * std::f64::consts::PI * blob as f64 / blobs as f64;
                let mut x: Vec<f64> = (0..dims).map(|_| noise.sample(&mut rng)).collect();
                x[0] += radius * angle.cos();
                x[1] += radius * angle.sin();
                xs.push(x);
                ys.push(y);
            }
            Split { xs, ys }
        };
        let train = split(train);
        let val = split(val);
        Ok(Self {
            classes,
            dims,
            train,
            val,
        })
    }
}

/// Affine, ReLU, affine classifier producing one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    pub net: Mlp,
}

impl ToyClassifier {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[inputs, hidden, classes], rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.net.layers[0].outputs
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    /// Hidden-layer activations (the "final-layer features").
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.net.trace(x).features().to_vec()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, split: &Split) -> f64 {
        let hits = split
            .xs
            .iter()
            .zip(&split.ys)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / split.len() as f64
    }

    /// Mean cross-entropy against the true labels.
    pub fn mean_ce(&self, split: &Split) -> f64 {
        split
            .xs
            .iter()
            .zip(&split.ys)
            .map(|(x, &y)| cross_entropy(&self.logits(x), y))
            .sum::<f64>()
            / split.len() as f64
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Negative log-probability of `target` under `softmax(logits)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    -log_softmax(logits)[target]
}

/// `(w/2) [CE(student, y) + CE(student, y_t)]` with `y_t` the teacher's hard decision.
pub fn distill_loss(student: &[f64], y: usize, teacher: &[f64], w: f64) -> f64 {
    let ls = log_softmax(student);
    0.5 * w * (-ls[y] - ls[argmax(teacher)])
}

/// Gradient of [`distill_loss`] with respect to the student logits:
/// `w (p - (e_y + e_yt) / 2)`.
pub fn distill_loss_grad(student: &[f64], y: usize, teacher: &[f64], w: f64) -> Vec<f64> {
    let yt = argmax(teacher);
    softmax(student)
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let target = 0.5 * (f64::from(u8::from(k == y)) + f64::from(u8::from(k == yt)));
            w * (p - target)
        })
        .collect()
}

/// Per-sample training weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights(pub Vec<f64>);

impl SampleWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }
}

pub fn init_weights(m: usize) -> SampleWeights {
    assert!(m >= 1, "need at least one sample");
    SampleWeights(vec![1.0 / m as f64; m])
}

/// Direction of the reweighting exponent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSign {
    /// Factor `exp[(1/M - 1) l_i]`: high-loss samples lose weight.
    #[default]
    Literal,
    /// Factor `exp[(1 - 1/M) l_i]`: high-loss samples gain weight, as in classical boosting.
    Flipped,
}

/// Multiplies each weight by its loss factor, then renormalizes to sum 1.
pub fn update_weights(prev: &SampleWeights, losses: &[f64], sign: WeightSign) -> Result<SampleWeights> {
    if losses.len() != prev.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} losses for {} weights",
            losses.len(),
            prev.len()
        )));
    }
    let m = prev.len() as f64;
    let coef = match sign {
        WeightSign::Literal => 1.0 / m - 1.0,
        WeightSign::Flipped => 1.0 - 1.0 / m,
    };
    // subtracting the extreme exponent keeps every factor in (0, 1] before normalizing
    let exps: Vec<f64> = losses.iter().map(|l| coef * l).collect();
    let top = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = prev.0.iter().zip(&exps).map(|(w, e)| w * (e - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NumericalFailure("sample weights collapsed".into()));
    }
    Ok(SampleWeights(raw.into_iter().map(|w| (w / total).max(f64::MIN_POSITIVE)).collect()))
}

/// Full-batch gradient descent on `sum_i w_i/2 [CE(y_i) + CE(yt_i)]`, or on
/// `sum_i w_i CE(y_i)` without teacher labels. Returns the loss before each step.
fn train_weighted(
    model: &mut ToyClassifier,
    split: &Split,
    teacher_labels: Option<&[usize]>,
    weights: &[f64],
    epochs: usize,
    lr: f64,
) -> Vec<f64> {
    let classes = model.net.output_dim();
    let mut grads = model.net.gradients();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        grads.zero();
        let mut loss = 0.0;
        for (i, (x, &y)) in split.xs.iter().zip(&split.ys).enumerate() {
            let trace = model.net.trace(x);
            let yt = teacher_labels.map_or(y, |t| t[i]);
            let mut onehot = vec![0.0; classes];
            onehot[yt] = 1.0;
            loss += distill_loss(trace.output(), y, &onehot, weights[i]);
            let g = distill_loss_grad(trace.output(), y, &onehot, weights[i]);
            model.net.backward(&trace, &g, &mut grads);
        }
        losses.push(loss);
        model.net.step(&grads, lr);
    }
    losses
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.5,
            seed: 0,
        }
    }
}

/// Trains a classifier on hard labels with uniform weights; returns it with
/// its validation accuracy.
pub fn train_teacher(data: &ToyDataset, hidden: usize, cfg: &ToyTrainConfig) -> (ToyClassifier, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyClassifier::new(data.dims, hidden, data.classes, &mut rng);
    let w = init_weights(data.train.len());
    train_weighted(&mut model, &data.train, None, &w.0, cfg.epochs, cfg.lr);
    let acc = model.accuracy(&data.val);
    (model, acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRound {
    pub hidden: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Entropy of the sample weights used to train this sub-model.
    pub weight_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub models: Vec<ToyClassifier>,
    pub rounds: Vec<CalibrationRound>,
    /// Weights after the final update.
    pub final_weights: SampleWeights,
}

/// Distills one sub-model per entry of `hidden`, in order. Each is trained
/// under the current sample weights; its unweighted per-sample distillation
/// losses then update the weights for the next one.
pub fn calibrate_sequence(
    teacher: &ToyClassifier,
    hidden: &[usize],
    data: &ToyDataset,
    cfg: &ToyTrainConfig,
    sign: WeightSign,
) -> Result<Calibration> {
    if hidden.is_empty() {
        return Err(Error::InvalidConfig("no sub-models to calibrate".into()));
    }
    let teacher_labels: Vec<usize> = data.train.xs.iter().map(|x| teacher.predict(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = init_weights(data.train.len());
    let mut models = Vec::with_capacity(hidden.len());
    let mut rounds = Vec::with_capacity(hidden.len());
    for &h in hidden {
        if h == 0 {
            return Err(Error::InvalidConfig("sub-model hidden width must be >= 1".into()));
        }
        let mut model = ToyClassifier::new(data.dims, h, data.classes, &mut rng);
        train_weighted(&mut model, &data.train, Some(&teacher_labels), &weights.0, cfg.epochs, cfg.lr);
        rounds.push(CalibrationRound {
            hidden: h,
            val_loss: model.mean_ce(&data.val),
            val_accuracy: model.accuracy(&data.val),
            weight_entropy: weights.entropy(),
        });
        let losses: Vec<f64> = data
            .train
            .xs
            .iter()
            .zip(&data.train.ys)
            .zip(&teacher_labels)
            .map(|((x, &y), &yt)| {
                let mut onehot = vec![0.0; data.classes];
                onehot[yt] = 1.0;
                distill_loss(&model.logits(x), y, &onehot, 1.0)
            })
            .collect();
        weights = update_weights(&weights, &losses, sign)?;
        models.push(model);
    }
    Ok(Calibration {
        models,
        rounds,
        final_weights: weights,
    })
}

/// The ablation baseline for [`calibrate_sequence`]: identical
/// initializations (same seed, same order) trained on hard labels with
/// uniform weights.
pub fn train_hard_sequence(hidden: &[usize], data: &ToyDataset, cfg: &ToyTrainConfig) -> Vec<ToyClassifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = init_weights(data.train.len());
    hidden
        .iter()
        .map(|&h| {
            let mut model = ToyClassifier::new(data.dims, h, data.classes, &mut rng);
            train_weighted(&mut model, &data.train, None, &w.0, cfg.epochs, cfg.lr);
            model
        })
        .collect()
}

/// Degradation measured on the toy task: each sub-model becomes a toy
/// classifier whose hidden width scales with its FLOPs share, the sequence is
/// calibrated against the teacher, and the validation losses are returned.
#[derive(Debug, Clone)]
pub struct ToyDegradation {
    pub base: TransformerConfig,
    pub data: ToyDataset,
    pub teacher: ToyClassifier,
    pub train: ToyTrainConfig,
    pub sign: WeightSign,
}

impl ToyDegradation {
    pub fn hidden_width(&self, cfg: &crate::arch::SubModelConfig) -> usize {
        let share = arch::flops(cfg, &self.base) / arch::flops(&self.base.full_sub_model(), &self.base);
        ((share * self.teacher.hidden() as f64).round() as usize).max(1)
    }
}

impl DegradationOracle for ToyDegradation {
    fn sub_model_losses(&self, policy: &DecompositionPolicy) -> Result<Vec<f64>> {
        let widths: Vec<usize> = policy.sub_models.iter().map(|c| self.hidden_width(c)).collect();
        let cal = calibrate_sequence(&self.teacher, &widths, &self.data, &self.train, self.sign)?;
        Ok(cal.rounds.iter().map(|r| r.val_loss).collect())
    }
}
