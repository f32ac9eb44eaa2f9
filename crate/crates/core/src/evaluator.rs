//! Scoring of decomposition policies: the three-phase latency model
//! (backbone, transmission, aggregation), accuracy degradation, and the
//! scalarized objective `psi = degradation + delta * latency`.

use serde::{Deserialize, Serialize};

use crate::arch::{self, DecompositionPolicy, DeviceFleet, SubModelConfig, TransformerConfig};
use crate::error::{Error, Result};
use crate::latency::{self, ArchFeatures, PredictorModel, ProfileParams};

pub const DEFAULT_DELTA: f64 = 0.005;
pub const DEFAULT_BITS_PER_VALUE: f64 = 32.0;

/// Source of phase-1 (backbone) latency for a sub-model on a fleet device.
pub trait BackboneLatency: Sync {
    fn backbone_ms(&self, device: usize, cfg: &SubModelConfig) -> f64;
}

/// One trained predictor per fleet device, in fleet order.
#[derive(Debug, Clone)]
pub struct Predictors {
    pub models: Vec<PredictorModel>,
}

impl Predictors {
    /// Orders `named` models to match the fleet; every device needs one.
    pub fn for_fleet(fleet: &DeviceFleet, mut named: Vec<(String, PredictorModel)>) -> Result<Self> {
        let models = fleet
            .devices
            .iter()
            .map(|d| {
                let pos = named
                    .iter()
                    .position(|(name, _)| name == &d.name)
                    .ok_or_else(|| Error::InvalidConfig(format!("no predictor for device `{}`", d.name)))?;
                Ok(named.swap_remove(pos).1)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models })
    }
}

impl BackboneLatency for Predictors {
    fn backbone_ms(&self, device: usize, cfg: &SubModelConfig) -> f64 {
        phase1_latency(cfg, &self.models[device])
    }
}

/// Noise-free synthetic profiler used directly as the latency source.
#[derive(Debug, Clone)]
pub struct AnalyticLatency {
    pub base: TransformerConfig,
    pub fleet: DeviceFleet,
    pub params: ProfileParams,
}

impl AnalyticLatency {
    pub fn new(base: &TransformerConfig, fleet: &DeviceFleet) -> Self {
        Self {
            base: base.clone(),
            fleet: fleet.clone(),
            params: ProfileParams::noiseless(),
        }
    }
}

impl BackboneLatency for AnalyticLatency {
    fn backbone_ms(&self, device: usize, cfg: &SubModelConfig) -> f64 {
        latency::profile_mean(&self.fleet.devices[device], cfg, &self.base, &self.params)
    }
}

/// Fixed per-device backbone times, ignoring the configuration.
#[derive(Debug, Clone)]
pub struct FixedLatency(pub Vec<f64>);

impl BackboneLatency for FixedLatency {
    fn backbone_ms(&self, device: usize, _cfg: &SubModelConfig) -> f64 {
        self.0[device]
    }
}

pub fn phase1_latency(cfg: &SubModelConfig, model: &PredictorModel) -> f64 {
    latency::predict_latency(model, &ArchFeatures::of(cfg))
}

/// Size of a sub-model's final-layer feature map `S x d_n`.
pub fn feature_bits(seq_len: usize, embed_dim: usize, bits_per_value: f64) -> f64 {
    seq_len as f64 * embed_dim as f64 * bits_per_value
}

/// Transmission time in ms of `bits` over a link of `rate` bits/ms.
pub fn phase2_latency(bits: f64, rate: f64) -> f64 {
    bits / rate
}

/// Aggregation time in ms: the `S x d_agg` by `d_agg x d_i` projection on the
/// central node with `compute` FLOPs/ms.
pub fn phase3_latency(seq_len: usize, central_dim: usize, aggregate_dim: usize, compute: f64) -> f64 {
    2.0 * seq_len as f64 * central_dim as f64 * aggregate_dim as f64 / compute
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub backbone_ms: Vec<f64>,
    /// Zero for the central node.
    pub transmit_ms: Vec<f64>,
    pub aggregate_ms: f64,
    pub total_ms: f64,
}

fn ensure_feasible(policy: &DecompositionPolicy, base: &TransformerConfig, fleet: &DeviceFleet) -> Result<()> {
    let report = arch::validate_policy(policy, base, fleet)?;
    if report.satisfied() {
        Ok(())
    } else {
        Err(Error::InfeasiblePolicy(report))
    }
}

/// Per-phase latencies of collaborative inference; `total_ms` is
/// `max_n(t1_n + t2_n) + t3`.
pub fn latency_breakdown(
    policy: &DecompositionPolicy,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    source: &dyn BackboneLatency,
    bits_per_value: f64,
) -> Result<LatencyBreakdown> {
    ensure_feasible(policy, base, fleet)?;
    let backbone_ms: Vec<f64> = policy
        .sub_models
        .iter()
        .enumerate()
        .map(|(n, cfg)| source.backbone_ms(n, cfg))
        .collect();
    let transmit_ms: Vec<f64> = policy
        .sub_models
        .iter()
        .zip(&fleet.devices)
        .enumerate()
        .map(|(n, (cfg, dev))| {
            if n == fleet.central {
                0.0
            } else {
                phase2_latency(feature_bits(base.seq_len, cfg.embed_dim(), bits_per_value), dev.bandwidth)
            }
        })
        .collect();
    let aggregate_ms = phase3_latency(
        base.seq_len,
        policy.sub_models[fleet.central].embed_dim(),
        policy.aggregate_dim(),
        fleet.central_device().compute,
    );
    let slowest = backbone_ms
        .iter()
        .zip(&transmit_ms)
        .map(|(a, b)| a + b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LatencyBreakdown {
        backbone_ms,
        transmit_ms,
        aggregate_ms,
        total_ms: slowest + aggregate_ms,
    })
}

pub fn end_to_end_latency(
    policy: &DecompositionPolicy,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    source: &dyn BackboneLatency,
) -> Result<f64> {
    Ok(latency_breakdown(policy, base, fleet, source, DEFAULT_BITS_PER_VALUE)?.total_ms)
}

/// Stand-in for the average validation loss of a policy's sub-models.
pub trait DegradationOracle: Sync {
    /// One nonnegative loss per sub-model.
    fn sub_model_losses(&self, policy: &DecompositionPolicy) -> Result<Vec<f64>>;
}

/// Capacity-based degradation:
/// `alpha * (1 - flops_n / flops_full)^beta + gamma * max(0, 1 - sum(d_n) / d)` per sub-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDegradation {
    pub base: TransformerConfig,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SyntheticDegradation {
    pub fn new(base: &TransformerConfig) -> Self {
        Self {
            base: base.clone(),
            alpha: 2.0,
            beta: 1.5,
            gamma: 0.5,
        }
    }
}

impl DegradationOracle for SyntheticDegradation {
    fn sub_model_losses(&self, policy: &DecompositionPolicy) -> Result<Vec<f64>> {
        let full = arch::flops(&self.base.full_sub_model(), &self.base);
        let coverage = (1.0 - policy.aggregate_dim() as f64 / self.base.embed_dim as f64).max(0.0);
        Ok(policy
            .sub_models
            .iter()
            .map(|cfg| {
                let deficit = (1.0 - arch::flops(cfg, &self.base) / full).max(0.0);
                self.alpha * deficit.powf(self.beta) + self.gamma * coverage
            })
            .collect())
    }
}

/// Mean of the oracle's per-sub-model losses.
pub fn degradation(policy: &DecompositionPolicy, oracle: &dyn DegradationOracle) -> Result<f64> {
    let losses = oracle.sub_model_losses(policy)?;
    if losses.is_empty() {
        return Err(Error::InvalidConfig("policy has no sub-models".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub degradation: f64,
    pub latency_ms: f64,
    pub delta: f64,
    pub psi: f64,
}

impl ObjectiveValue {
    pub fn new(degradation: f64, latency_ms: f64, delta: f64) -> Self {
        Self {
            degradation,
            latency_ms,
            delta,
            psi: degradation + delta * latency_ms,
        }
    }
}

/// Everything needed to score a policy.
pub struct Evaluator<'a> {
    pub base: &'a TransformerConfig,
    pub fleet: &'a DeviceFleet,
    pub latency: &'a dyn BackboneLatency,
    pub oracle: &'a dyn DegradationOracle,
    pub delta: f64,
}

impl Evaluator<'_> {
    pub fn evaluate(&self, policy: &DecompositionPolicy) -> Result<ObjectiveValue> {
        objective(policy, self.base, self.fleet, self.latency, self.oracle, self.delta)
    }
}

pub fn objective(
    policy: &DecompositionPolicy,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    source: &dyn BackboneLatency,
    oracle: &dyn DegradationOracle,
    delta: f64,
) -> Result<ObjectiveValue> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!("delta must be finite and >= 0, got {delta}")));
    }
    let latency_ms = end_to_end_latency(policy, base, fleet, source)?;
    Ok(ObjectiveValue::new(degradation(policy, oracle)?, latency_ms, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::DeviceSpec;

    fn device(name: &str, compute: f64, bandwidth: f64) -> DeviceSpec {
        DeviceSpec {
            name: name.into(),
            compute,
            memory: f64::INFINITY,
            flops_cap: f64::INFINITY,
            bandwidth,
            busy_power: 1.0,
            idle_power: 1.0,
        }
    }

    #[test]
    fn phase_formulas() {
        assert_eq!(phase2_latency(4_000_000.0, 2_000.0), 2000.0);
        assert_eq!(phase2_latency(4_000_000.0, 4_000.0), 1000.0);
        assert_eq!(phase3_latency(1, 1, 1, 2.0), 1.0);
        let t = phase3_latency(197, 384, 1152, 1e6);
        assert!((t - 174.292_992).abs() < 1e-9);
        assert_eq!(phase3_latency(197, 384, 2304, 1e6), 2.0 * t);
        assert_eq!(feature_bits(197, 384, 32.0), 197.0 * 384.0 * 32.0);
    }

    #[test]
    fn two_devices_take_the_slower_path() {
        let base = TransformerConfig::new(2, 4, 2, 4, 1, 2, 4.0).unwrap();
        // 1 x 2 x 32 = 64 bits each; rates give t2 = 4 and 14
        let fleet = DeviceFleet::new(vec![device("c", 2.0 * 2.0 * 4.0 / 5.0, 1.0), device("o", 1.0, 64.0 / 14.0)], 0)
            .unwrap();
        let policy = DecompositionPolicy::new(vec![
            SubModelConfig::uniform(1, 2, 1, 1).unwrap(),
            SubModelConfig::uniform(1, 2, 1, 1).unwrap(),
        ]);
        let times = FixedLatency(vec![10.0, 16.0]);
        let b = latency_breakdown(&policy, &base, &fleet, &times, 32.0).unwrap();
        assert_eq!(b.transmit_ms[0], 0.0);
        assert!((b.transmit_ms[1] - 14.0).abs() < 1e-12);
        assert!((b.aggregate_ms - 5.0).abs() < 1e-12);
        assert!((b.total_ms - 35.0).abs() < 1e-12);
    }

    #[test]
    fn single_device_is_backbone_plus_aggregation() {
        let base = TransformerConfig::deit_base();
        let fleet = DeviceFleet::single(device("solo", 1e8, 1.0));
        let policy = DecompositionPolicy::identity(&base);
        let t = end_to_end_latency(&policy, &base, &fleet, &FixedLatency(vec![40.0])).unwrap();
        assert_eq!(t, 40.0 + phase3_latency(197, 768, 768, 1e8));
    }

    #[test]
    fn synthetic_oracle_is_calibrated() {
        let base = TransformerConfig::deit_base();
        let oracle = SyntheticDegradation::new(&base);
        let id = degradation(&DecompositionPolicy::identity(&base), &oracle).unwrap();
        assert_eq!(id, 0.0);
        let minimal = DecompositionPolicy::minimal(&base, 1);
        let r = arch::flops(&base.minimal_sub_model(), &base) / arch::flops(&base.full_sub_model(), &base);
        let expected = 2.0 * (1.0 - r).powf(1.5) + 0.5 * (1.0 - 64.0 / 768.0);
        assert!((degradation(&minimal, &oracle).unwrap() - expected).abs() < 1e-12);
        assert!(expected > 1.99 * 1.0 && expected < 2.5);
    }

    #[test]
    fn objective_identity() {
        let v = ObjectiveValue::new(0.5, 100.0, 0.01);
        assert!((v.psi - 1.5).abs() < 1e-12);
        assert_eq!(ObjectiveValue::new(0.7, 55.0, 0.0).psi, 0.7);
    }

    #[test]
    fn infeasible_policy_is_rejected() {
        let base = TransformerConfig::deit_base();
        let mut d = device("small", 1e8, 1.0);
        d.flops_cap = 1e9;
        let fleet = DeviceFleet::single(d);
        let err = objective(
            &DecompositionPolicy::identity(&base),
            &base,
            &fleet,
            &AnalyticLatency::new(&base, &fleet),
            &SyntheticDegradation::new(&base),
            DEFAULT_DELTA,
        )
        .unwrap_err();
        match err {
            Error::InfeasiblePolicy(report) => assert_eq!(report.violations[0].constraint, arch::Constraint::Compute),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predictors_follow_fleet_order() {
        use crate::nn::Mlp;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = |bias: f64| {
            let mut net = Mlp::new(&[4, 2, 2, 1], &mut rng);
            net.layers.iter_mut().for_each(|l| l.weights.fill(0.0));
            net.layers[2].bias[0] = bias;
            PredictorModel {
                format: latency::PREDICTOR_FORMAT.into(),
                net,
                input_mean: [0.0; 4],
                input_std: [1.0; 4],
                output_mean: 0.0,
                output_std: 1.0,
            }
        };
        let fleet = DeviceFleet::example();
        let named = vec![
            ("orin-nano".to_string(), model(3.0)),
            ("nano".to_string(), model(1.0)),
            ("tx2".to_string(), model(2.0)),
        ];
        let p = Predictors::for_fleet(&fleet, named).unwrap();
        let cfg = SubModelConfig::uniform(1, 64, 1, 1).unwrap();
        let got: Vec<f64> = (0..3).map(|n| p.backbone_ms(n, &cfg)).collect();
        assert_eq!(got, vec![1.0, 2.0, 3.0]);
        assert_eq!(phase1_latency(&cfg, &p.models[0]), latency::predict_latency(&p.models[0], &ArchFeatures::of(&cfg)));
        assert!(Predictors::for_fleet(&fleet, vec![]).is_err());
    }
}
