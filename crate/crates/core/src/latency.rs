//! Per-device latency: a synthetic profiler standing in for on-device
//! measurements, dataset collection, and the MLP latency predictor that maps
//! `(l, d, mean heads, mean MLP width)` to milliseconds.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arch::{self, DeviceFleet, DeviceSpec, SubModelConfig, TransformerConfig};
use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const PREDICTOR_FORMAT: &str = "edgesplit-predictor/1";

/// Floor applied to every prediction.
pub const MIN_LATENCY_MS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchFeatures {
    pub layers: f64,
    pub embed_dim: f64,
    pub mean_heads: f64,
    pub mean_mlp: f64,
}

impl ArchFeatures {
    pub fn of(cfg: &SubModelConfig) -> Self {
        Self {
            layers: cfg.layers() as f64,
            embed_dim: cfg.embed_dim() as f64,
            mean_heads: cfg.mean_heads(),
            mean_mlp: cfg.mean_mlp_dim(),
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.layers, self.embed_dim, self.mean_heads, self.mean_mlp]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub features: ArchFeatures,
    pub device: String,
    pub latency_ms: f64,
}

/// Knobs of the synthetic profiler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Fixed cost per transformer block (kernel launches, sync).
    pub launch_overhead_ms: f64,
    /// Effective memory bandwidth as a multiple of compute: bytes/ms = factor * FLOPs/ms.
    pub membw_factor: f64,
    /// Standard deviation of the log-normal measurement noise; 0 disables noise.
    pub noise_sigma: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            launch_overhead_ms: 0.2,
            membw_factor: 50.0,
            noise_sigma: 0.03,
        }
    }
}

impl ProfileParams {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }
}

/// Noise-free part of the synthetic latency.
pub fn profile_mean(
    device: &DeviceSpec,
    cfg: &SubModelConfig,
    base: &TransformerConfig,
    params: &ProfileParams,
) -> f64 {
    let compute = arch::flops(cfg, base) / device.compute;
    let transfer = arch::memory(cfg, base) / (params.membw_factor * device.compute);
    compute + transfer + params.launch_overhead_ms * cfg.layers() as f64
}

/// Synthetic "measured" latency in ms: the analytic cost times log-normal noise.
pub fn synth_profile(
    device: &DeviceSpec,
    cfg: &SubModelConfig,
    base: &TransformerConfig,
    params: &ProfileParams,
    seed: u64,
) -> f64 {
    let mean = profile_mean(device, cfg, base, params);
    if params.noise_sigma == 0.0 {
        return mean;
    }
    let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    mean * (params.noise_sigma * z).exp()
}

/// Draws `n` feasible single-device sub-models and profiles each one.
pub fn collect_dataset(
    device: &DeviceSpec,
    base: &TransformerConfig,
    n: usize,
    params: &ProfileParams,
    seed: u64,
) -> Result<Vec<LatencySample>> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be >= 1".into()));
    }
    let fleet = DeviceFleet::single(device.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let policy = arch::sample_policy(base, &fleet, &mut rng)?;
            let cfg = &policy.sub_models[0];
            let latency_ms = synth_profile(device, cfg, base, params, rng.next_u64());
            Ok(LatencySample {
                features: ArchFeatures::of(cfg),
                device: device.name.clone(),
                latency_ms,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    l: f64,
    d: f64,
    h_bar: f64,
    #[serde(rename = "D_bar")]
    d_bar: f64,
    device: String,
    latency_ms: f64,
}

pub fn write_dataset<W: Write>(samples: &[LatencySample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(CsvRow {
            l: s.features.layers,
            d: s.features.embed_dim,
            h_bar: s.features.mean_heads,
            d_bar: s.features.mean_mlp,
            device: s.device.clone(),
            latency_ms: s.latency_ms,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<LatencySample>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            if row.latency_ms.is_nan() || row.latency_ms <= 0.0 {
                return Err(Error::DegenerateData(format!(
                    "non-positive latency {} in dataset",
                    row.latency_ms
                )));
            }
            Ok(LatencySample {
                features: ArchFeatures {
                    layers: row.l,
                    embed_dim: row.d,
                    mean_heads: row.h_bar,
                    mean_mlp: row.d_bar,
                },
                device: row.device,
                latency_ms: row.latency_ms,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 600,
            epochs: 200,
            lr: 1e-3,
            batch_size: 64,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared error on the (normalized) training split after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_size: usize,
    pub holdout_size: usize,
    pub holdout_rmse_ms: f64,
    pub holdout_mean_ms: f64,
}

/// Three-layer MLP latency predictor with z-score normalization on both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub format: String,
    pub net: Mlp,
    pub input_mean: [f64; 4],
    pub input_std: [f64; 4],
    pub output_mean: f64,
    pub output_std: f64,
}

impl PredictorModel {
    fn normalize(&self, f: &ArchFeatures) -> [f64; 4] {
        let mut x = f.to_array();
        for ((v, m), s) in x.iter_mut().zip(&self.input_mean).zip(&self.input_std) {
            *v = (*v - m) / s;
        }
        x
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.format != PREDICTOR_FORMAT {
            return Err(Error::FormatVersion {
                found: model.format,
                expected: PREDICTOR_FORMAT.into(),
            });
        }
        let consistent = model.net.input_dim() == 4
            && model.net.output_dim() == 1
            && model.net.layers.iter().all(|l| l.weights.len() == l.inputs * l.outputs)
            && model.input_std.iter().chain(&model.input_mean).all(|v| v.is_finite())
            && model.output_mean.is_finite()
            && model.output_std.is_finite();
        if !consistent {
            return Err(Error::InvalidConfig(format!("{}: malformed predictor", path.display())));
        }
        Ok(model)
    }
}

/// Predicted latency in ms, never below [`MIN_LATENCY_MS`].
pub fn predict_latency(model: &PredictorModel, feats: &ArchFeatures) -> f64 {
    let y = model.net.forward(&model.normalize(feats))[0] * model.output_std + model.output_mean;
    if y.is_finite() {
        y.max(MIN_LATENCY_MS)
    } else {
        MIN_LATENCY_MS
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits a predictor with mini-batch gradient descent on squared error.
/// The data is shuffled once and split into train/holdout.
pub fn train_predictor(data: &[LatencySample], cfg: &TrainConfig) -> Result<(PredictorModel, TrainReport)> {
    if data.len() < 100 {
        return Err(Error::DegenerateData(format!(
            "need at least 100 samples, got {}",
            data.len()
        )));
    }
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidConfig("bad predictor training configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let holdout_size = ((data.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, data.len() - 1);
    let (holdout_idx, train_idx) = order.split_at(holdout_size);
    let train: Vec<&LatencySample> = train_idx.iter().map(|&i| &data[i]).collect();
    let holdout: Vec<&LatencySample> = holdout_idx.iter().map(|&i| &data[i]).collect();

    const NAMES: [&str; 4] = ["l", "d", "h_bar", "D_bar"];
    let mut input_mean = [0.0; 4];
    let mut input_std = [0.0; 4];
    for i in 0..4 {
        let (m, s) = mean_std(train.iter().map(|s| s.features.to_array()[i]));
        if s.is_nan() || s <= 1e-12 {
            return Err(Error::DegenerateData(format!("feature `{}` has zero variance", NAMES[i])));
        }
        input_mean[i] = m;
        input_std[i] = s;
    }
    let (output_mean, raw_std) = mean_std(train.iter().map(|s| s.latency_ms));
    let constant_target = raw_std.is_nan() || raw_std <= 1e-12;
    let output_std = if constant_target { 1.0 } else { raw_std };

    let mut model = PredictorModel {
        format: PREDICTOR_FORMAT.into(),
        net: Mlp::new(&[4, cfg.hidden, cfg.hidden, 1], &mut rng),
        input_mean,
        input_std,
        output_mean,
        output_std,
    };
    let xs: Vec<[f64; 4]> = train.iter().map(|s| model.normalize(&s.features)).collect();
    let ys: Vec<f64> = train.iter().map(|s| (s.latency_ms - output_mean) / output_std).collect();
    let mse = |net: &Mlp| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (net.forward(x)[0] - y).powi(2))
            .sum::<f64>()
            / xs.len() as f64
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    if constant_target {
        // the least-squares fit of a constant is the constant itself
        let last = model.net.layers.last_mut().expect("output layer");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        epoch_losses.resize(cfg.epochs, 0.0);
    } else {
        let mut grads = model.net.gradients();
        let mut batch_order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..cfg.epochs {
            batch_order.shuffle(&mut rng);
            for batch in batch_order.chunks(cfg.batch_size) {
                grads.zero();
                let scale = 2.0 / batch.len() as f64;
                for &i in batch {
                    let trace = model.net.trace(&xs[i]);
                    let err = trace.output()[0] - ys[i];
                    model.net.backward(&trace, &[scale * err], &mut grads);
                }
                model.net.step(&grads, cfg.lr);
            }
            epoch_losses.push(mse(&model.net));
        }
    }
    if !model.net.is_finite() {
        return Err(Error::NumericalFailure("predictor weights diverged".into()));
    }

    let sq: f64 = holdout
        .iter()
        .map(|s| (predict_latency(&model, &s.features) - s.latency_ms).powi(2))
        .sum();
    let report = TrainReport {
        epoch_losses,
        train_size: train.len(),
        holdout_size: holdout.len(),
        holdout_rmse_ms: (sq / holdout.len() as f64).sqrt(),
        holdout_mean_ms: holdout.iter().map(|s| s.latency_ms).sum::<f64>() / holdout.len() as f64,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_device(compute: f64) -> DeviceSpec {
        DeviceSpec {
            name: "unit".into(),
            compute,
            memory: f64::INFINITY,
            flops_cap: f64::INFINITY,
            bandwidth: 1.0,
            busy_power: 1.0,
            idle_power: 1.0,
        }
    }

    #[test]
    fn noiseless_unit_profile_is_closed_form() {
        let base = TransformerConfig::new(1, 1, 1, 1, 1, 1, 4.0).unwrap();
        let cfg = SubModelConfig::uniform(1, 1, 1, 1).unwrap();
        let p = ProfileParams::noiseless();
        let t = synth_profile(&unit_device(16.0), &cfg, &base, &p, 9);
        // 16 FLOPs / 16 + 68 bytes / (50 * 16) + 1 * 0.2
        assert_eq!(t, 1.0 + 68.0 / 800.0 + 0.2);
    }

    #[test]
    fn doubling_compute_halves_the_compute_term() {
        let base = TransformerConfig::deit_base();
        let cfg = SubModelConfig::uniform(6, 384, 6, 1536).unwrap();
        let p = ProfileParams {
            launch_overhead_ms: 0.0,
            membw_factor: f64::INFINITY,
            noise_sigma: 0.0,
        };
        let a = synth_profile(&unit_device(1e6), &cfg, &base, &p, 0);
        let b = synth_profile(&unit_device(2e6), &cfg, &base, &p, 0);
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn noisy_profile_is_seeded() {
        let base = TransformerConfig::deit_base();
        let cfg = SubModelConfig::uniform(6, 384, 6, 1536).unwrap();
        let p = ProfileParams::default();
        let dev = unit_device(1e8);
        assert_eq!(
            synth_profile(&dev, &cfg, &base, &p, 5),
            synth_profile(&dev, &cfg, &base, &p, 5)
        );
        assert_ne!(
            synth_profile(&dev, &cfg, &base, &p, 5),
            synth_profile(&dev, &cfg, &base, &p, 6)
        );
    }

    #[test]
    fn dataset_sizes_and_csv() {
        let base = TransformerConfig::deit_base();
        let dev = unit_device(2e8);
        let one = collect_dataset(&dev, &base, 1, &ProfileParams::default(), 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!(collect_dataset(&dev, &base, 0, &ProfileParams::default(), 1).is_err());

        let data = collect_dataset(&dev, &base, 20, &ProfileParams::default(), 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("l,d,h_bar,D_bar,device,latency_ms\n"));
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn too_little_or_degenerate_data_is_rejected() {
        let sample = |l: f64, lat: f64| LatencySample {
            features: ArchFeatures {
                layers: l,
                embed_dim: 64.0,
                mean_heads: 1.0,
                mean_mlp: 10.0,
            },
            device: "x".into(),
            latency_ms: lat,
        };
        let few: Vec<_> = (0..50).map(|i| sample(i as f64, 1.0)).collect();
        assert!(matches!(
            train_predictor(&few, &TrainConfig::default()),
            Err(Error::DegenerateData(_))
        ));
        let flat: Vec<_> = (0..200).map(|i| sample(i as f64, 1.0)).collect();
        assert!(matches!(
            train_predictor(&flat, &TrainConfig::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn constant_latency_is_predicted_exactly() {
        let base = TransformerConfig::deit_base();
        let mut data = collect_dataset(&unit_device(2e8), &base, 150, &ProfileParams::default(), 3).unwrap();
        data.iter_mut().for_each(|s| s.latency_ms = 42.0);
        let cfg = TrainConfig {
            hidden: 8,
            epochs: 3,
            ..TrainConfig::default()
        };
        let (model, _) = train_predictor(&data, &cfg).unwrap();
        for s in &data {
            assert!((predict_latency(&model, &s.features) - 42.0).abs() < 1e-3);
        }
    }

    #[test]
    fn prediction_is_clamped_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = PredictorModel {
            format: PREDICTOR_FORMAT.into(),
            net: Mlp::new(&[4, 3, 3, 1], &mut rng),
            input_mean: [0.0; 4],
            input_std: [1.0; 4],
            output_mean: -1e6,
            output_std: 1.0,
        };
        let f = ArchFeatures {
            layers: 1.0,
            embed_dim: 1.0,
            mean_heads: 1.0,
            mean_mlp: 1.0,
        };
        assert_eq!(predict_latency(&model, &f), MIN_LATENCY_MS);
        model.output_mean = f64::NAN;
        assert_eq!(predict_latency(&model, &f), MIN_LATENCY_MS);
    }
}
