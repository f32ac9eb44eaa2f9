//! Transformer architecture configurations, the decomposition search space,
//! hardware constraint checking (C1..C6) and the analytic compute/memory cost
//! model used to bound each device.
//!
//! Sub-models keep the base model's head width `d_h = d / h`; decomposition
//! removes whole heads, MLP neurons, trailing layers and a suffix of the
//! embedding dimensions.

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attempts (shrink steps plus budget repairs) before sampling gives up.
pub const MAX_REPAIR_ATTEMPTS: usize = 10_000;

/// The large transformer being decomposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub bytes_per_param: f64,
}

impl TransformerConfig {
    pub fn new(
        layers: usize,
        embed_dim: usize,
        heads: usize,
        mlp_dim: usize,
        seq_len: usize,
        num_classes: usize,
        bytes_per_param: f64,
    ) -> Result<Self> {
        let cfg = Self {
            layers,
            embed_dim,
            heads,
            mlp_dim,
            seq_len,
            num_classes,
            bytes_per_param,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// DeiT-B / ViT-B/16 at 224px: 12 layers, 768 dims, 12 heads, 3072 MLP, 197 tokens.
    pub fn deit_base() -> Self {
        Self {
            layers: 12,
            embed_dim: 768,
            heads: 12,
            mlp_dim: 3072,
            seq_len: 197,
            num_classes: 1000,
            bytes_per_param: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("seq_len", self.seq_len),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("transformer {name} must be >= 1")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if !(self.bytes_per_param.is_finite() && self.bytes_per_param > 0.0) {
            return Err(Error::InvalidConfig("bytes_per_param must be > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// The whole model expressed as a single sub-model.
    pub fn full_sub_model(&self) -> SubModelConfig {
        SubModelConfig {
            embed_dim: self.embed_dim,
            heads: vec![self.heads; self.layers],
            mlp_dims: vec![self.mlp_dim; self.layers],
        }
    }

    /// The smallest representable sub-model: one layer, one head, one neuron, `d_h` dims.
    pub fn minimal_sub_model(&self) -> SubModelConfig {
        SubModelConfig {
            embed_dim: self.head_dim(),
            heads: vec![1],
            mlp_dims: vec![1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSubModel {
    layers: usize,
    embed_dim: usize,
    heads: Vec<usize>,
    mlp_dims: Vec<usize>,
}

/// Architecture of the sub-model assigned to one device.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSubModel", into = "RawSubModel")]
pub struct SubModelConfig {
    embed_dim: usize,
    heads: Vec<usize>,
    mlp_dims: Vec<usize>,
}

impl TryFrom<RawSubModel> for SubModelConfig {
    type Error = Error;

    fn try_from(raw: RawSubModel) -> Result<Self> {
        if raw.heads.len() != raw.layers || raw.mlp_dims.len() != raw.layers {
            return Err(Error::InvalidConfig(format!(
                "sub-model declares {} layers but has {} head counts and {} mlp dims",
                raw.layers,
                raw.heads.len(),
                raw.mlp_dims.len()
            )));
        }
        SubModelConfig::new(raw.embed_dim, raw.heads, raw.mlp_dims)
    }
}

impl From<SubModelConfig> for RawSubModel {
    fn from(cfg: SubModelConfig) -> Self {
        RawSubModel {
            layers: cfg.layers(),
            embed_dim: cfg.embed_dim,
            heads: cfg.heads,
            mlp_dims: cfg.mlp_dims,
        }
    }
}

impl SubModelConfig {
    pub fn new(embed_dim: usize, heads: Vec<usize>, mlp_dims: Vec<usize>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidConfig("sub-model needs at least one layer".into()));
        }
        if heads.len() != mlp_dims.len() {
            return Err(Error::InvalidConfig(format!(
                "per-layer vectors differ in length ({} heads, {} mlp dims)",
                heads.len(),
                mlp_dims.len()
            )));
        }
        if embed_dim == 0 || heads.contains(&0) || mlp_dims.contains(&0) {
            return Err(Error::InvalidConfig("sub-model dimensions must be >= 1".into()));
        }
        Ok(Self {
            embed_dim,
            heads,
            mlp_dims,
        })
    }

    /// Same head count and MLP width in every layer.
    pub fn uniform(layers: usize, embed_dim: usize, heads: usize, mlp_dim: usize) -> Result<Self> {
        Self::new(embed_dim, vec![heads; layers], vec![mlp_dim; layers])
    }

    pub fn layers(&self) -> usize {
        self.heads.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn mlp_dims(&self) -> &[usize] {
        &self.mlp_dims
    }

    pub fn mean_heads(&self) -> f64 {
        self.heads.iter().sum::<usize>() as f64 / self.layers() as f64
    }

    pub fn mean_mlp_dim(&self) -> f64 {
        self.mlp_dims.iter().sum::<usize>() as f64 / self.layers() as f64
    }

    pub fn max_mlp_dim(&self) -> usize {
        self.mlp_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn is_uniform(&self) -> bool {
        self.heads.windows(2).all(|w| w[0] == w[1]) && self.mlp_dims.windows(2).all(|w| w[0] == w[1])
    }
}

impl fmt::Display for SubModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l={} d={}", self.layers(), self.embed_dim)?;
        if self.is_uniform() {
            write!(f, " h={} D={}", self.heads[0], self.mlp_dims[0])
        } else {
            write!(f, " h={:?} D={:?}", self.heads, self.mlp_dims)
        }
    }
}

/// One sub-model per device, in fleet order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecompositionPolicy {
    pub sub_models: Vec<SubModelConfig>,
}

impl DecompositionPolicy {
    pub fn new(sub_models: Vec<SubModelConfig>) -> Self {
        Self { sub_models }
    }

    /// The undecomposed model on a single device.
    pub fn identity(base: &TransformerConfig) -> Self {
        Self::new(vec![base.full_sub_model()])
    }

    pub fn minimal(base: &TransformerConfig, devices: usize) -> Self {
        Self::new(vec![base.minimal_sub_model(); devices])
    }

    pub fn len(&self) -> usize {
        self.sub_models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_models.is_empty()
    }

    /// Concatenated feature width at the central node.
    pub fn aggregate_dim(&self) -> usize {
        self.sub_models.iter().map(SubModelConfig::embed_dim).sum()
    }
}

/// Hardware description of one edge device.
///
/// Units: compute in FLOPs/ms, memory in bytes, the compute cap in FLOPs,
/// bandwidth to the central node in bits/ms, power in mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub compute: f64,
    pub memory: f64,
    pub flops_cap: f64,
    pub bandwidth: f64,
    pub busy_power: f64,
    pub idle_power: f64,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("compute", self.compute),
            ("memory", self.memory),
            ("flops_cap", self.flops_cap),
            ("bandwidth", self.bandwidth),
            ("busy_power", self.busy_power),
            ("idle_power", self.idle_power),
        ];
        for (name, v) in fields {
            // +inf is allowed for "unconstrained"
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "device `{}`: {name} must be > 0 (got {v})",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFleet {
    pub devices: Vec<DeviceSpec>,
    pub central: usize,
}

impl DeviceFleet {
    pub fn new(devices: Vec<DeviceSpec>, central: usize) -> Result<Self> {
        let fleet = Self { devices, central };
        fleet.validate()?;
        Ok(fleet)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::InvalidConfig("fleet has no devices".into()));
        }
        if self.central >= self.devices.len() {
            return Err(Error::InvalidConfig(format!(
                "central index {} out of range for {} devices",
                self.central,
                self.devices.len()
            )));
        }
        self.devices.iter().try_for_each(DeviceSpec::validate)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn central_device(&self) -> &DeviceSpec {
        &self.devices[self.central]
    }

    /// A fleet holding only `device`, which is also the central node.
    pub fn single(device: DeviceSpec) -> Self {
        Self {
            devices: vec![device],
            central: 0,
        }
    }

    /// The three-board example fleet (Nano-like, TX2-like, Orin-Nano-like);
    /// the TX2-like board is the central node.
    pub fn example() -> Self {
        let board = |name: &str, gflops: f64, mem_gb: f64, cap_g: f64, busy_w: f64| DeviceSpec {
            name: name.to_string(),
            compute: gflops * 1e6,
            memory: mem_gb * 1e9,
            flops_cap: cap_g * 1e9,
            bandwidth: 100.0 * 1e3,
            busy_power: busy_w * 1e3,
            idle_power: 1.5e3,
        };
        Self {
            devices: vec![
                board("nano", 235.8, 4.0, 8.0, 10.0),
                board("tx2", 665.6, 8.0, 20.0, 15.0),
                board("orin-nano", 640.0, 4.0, 16.0, 10.0),
            ],
            central: 1,
        }
    }
}

/// The six feasibility constraints of the decomposition problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Constraint {
    /// C1: l_n <= L.
    Layers,
    /// C2: sum of d_n <= d.
    EmbedBudget,
    /// C3: per-layer sum of heads <= h.
    HeadBudget,
    /// C4: per-layer sum of MLP widths <= D.
    MlpBudget,
    /// C5: FLOPs within the device cap.
    Compute,
    /// C6: bytes within device memory.
    Memory,
}

impl Constraint {
    pub fn id(self) -> &'static str {
        match self {
            Constraint::Layers => "C1",
            Constraint::EmbedBudget => "C2",
            Constraint::HeadBudget => "C3",
            Constraint::MlpBudget => "C4",
            Constraint::Compute => "C5",
            Constraint::Memory => "C6",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// Offending device for per-device constraints (C1, C5, C6).
    pub device: Option<usize>,
    /// Offending layer for per-layer budgets (C3, C4).
    pub layer: Option<usize>,
    pub measured: f64,
    pub bound: f64,
}

/// A sub-model whose embedding is narrower than one of its attention blocks.
/// Not a constraint of the optimization problem, only reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeWarning {
    pub device: usize,
    pub layer: usize,
    pub embed_dim: usize,
    pub attention_width: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<ShapeWarning>,
}

impl ConstraintReport {
    pub fn satisfied(&self) -> bool {
        self.violations.is_empty()
    }
}

/// FLOPs of one forward pass (a multiply-accumulate counts as 2).
///
/// Per layer: QKV projections, output projection, attention scores plus the
/// weighted sum of values, and the two MLP matmuls.
pub fn flops(cfg: &SubModelConfig, base: &TransformerConfig) -> f64 {
    let s = base.seq_len as f64;
    let dh = base.head_dim() as f64;
    let d = cfg.embed_dim as f64;
    cfg.heads
        .iter()
        .zip(&cfg.mlp_dims)
        .map(|(&h, &mlp)| {
            let attn = h as f64 * dh;
            6.0 * s * d * attn + 2.0 * s * attn * d + 4.0 * s * s * attn + 4.0 * s * d * mlp as f64
        })
        .sum()
}

/// Parameter count behind [`memory`]: attention and MLP weights, two
/// layer norms per block, positional embedding plus class token, and the
/// classifier head.
pub fn parameter_count(cfg: &SubModelConfig, base: &TransformerConfig) -> f64 {
    let d = cfg.embed_dim as f64;
    let dh = base.head_dim() as f64;
    let blocks: f64 = cfg
        .heads
        .iter()
        .zip(&cfg.mlp_dims)
        .map(|(&h, &mlp)| 4.0 * d * (h as f64 * dh) + 2.0 * d * mlp as f64 + 4.0 * d)
        .sum();
    blocks + d * (base.seq_len as f64 + 1.0) + d * base.num_classes as f64
}

/// Peak activation bytes: four live `S x max(d_n, D_n)` buffers.
pub fn activation_bytes(cfg: &SubModelConfig, base: &TransformerConfig) -> f64 {
    let widest = cfg.embed_dim.max(cfg.max_mlp_dim()) as f64;
    4.0 * base.seq_len as f64 * widest * base.bytes_per_param
}

/// Bytes needed to hold the sub-model's parameters and peak activations.
pub fn memory(cfg: &SubModelConfig, base: &TransformerConfig) -> f64 {
    base.bytes_per_param * parameter_count(cfg, base) + activation_bytes(cfg, base)
}

/// Checks C1..C6 and lists every violation.
pub fn validate_policy(
    policy: &DecompositionPolicy,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
) -> Result<ConstraintReport> {
    if policy.len() != fleet.len() {
        return Err(Error::MismatchedFleet {
            policy: policy.len(),
            fleet: fleet.len(),
        });
    }
    let mut report = ConstraintReport::default();
    let dh = base.head_dim();

    for (n, (cfg, dev)) in policy.sub_models.iter().zip(&fleet.devices).enumerate() {
        if cfg.layers() > base.layers {
            report.violations.push(Violation {
                constraint: Constraint::Layers,
                device: Some(n),
                layer: None,
                measured: cfg.layers() as f64,
                bound: base.layers as f64,
            });
        }
        let f = flops(cfg, base);
        if f > dev.flops_cap {
            report.violations.push(Violation {
                constraint: Constraint::Compute,
                device: Some(n),
                layer: None,
                measured: f,
                bound: dev.flops_cap,
            });
        }
        let m = memory(cfg, base);
        if m > dev.memory {
            report.violations.push(Violation {
                constraint: Constraint::Memory,
                device: Some(n),
                layer: None,
                measured: m,
                bound: dev.memory,
            });
        }
        for (k, &h) in cfg.heads.iter().enumerate() {
            if h * dh > cfg.embed_dim {
                report.warnings.push(ShapeWarning {
                    device: n,
                    layer: k,
                    embed_dim: cfg.embed_dim,
                    attention_width: h * dh,
                });
            }
        }
    }

    let embed_total = policy.aggregate_dim();
    if embed_total > base.embed_dim {
        report.violations.push(Violation {
            constraint: Constraint::EmbedBudget,
            device: None,
            layer: None,
            measured: embed_total as f64,
            bound: base.embed_dim as f64,
        });
    }

    let depth = policy.sub_models.iter().map(SubModelConfig::layers).max().unwrap_or(0);
    for k in 0..depth {
        let (heads, mlp) = policy
            .sub_models
            .iter()
            .filter(|c| c.layers() > k)
            .fold((0usize, 0usize), |(h, m), c| (h + c.heads[k], m + c.mlp_dims[k]));
        if heads > base.heads {
            report.violations.push(Violation {
                constraint: Constraint::HeadBudget,
                device: None,
                layer: Some(k),
                measured: heads as f64,
                bound: base.heads as f64,
            });
        }
        if mlp > base.mlp_dim {
            report.violations.push(Violation {
                constraint: Constraint::MlpBudget,
                device: None,
                layer: Some(k),
                measured: mlp as f64,
                bound: base.mlp_dim as f64,
            });
        }
    }
    Ok(report)
}

/// Constant-per-layer sub-model used while sampling and repairing.
/// `embed_dim` is kept a multiple of the head width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UniformSubModel {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

impl UniformSubModel {
    pub fn to_config(self) -> SubModelConfig {
        SubModelConfig {
            embed_dim: self.embed_dim,
            heads: vec![self.heads; self.layers],
            mlp_dims: vec![self.mlp_dim; self.layers],
        }
    }

    fn fits(&self, base: &TransformerConfig, dev: &DeviceSpec) -> bool {
        let cfg = self.to_config();
        flops(&cfg, base) <= dev.flops_cap && memory(&cfg, base) <= dev.memory
    }
}

/// Fails with `InfeasibleFleet` unless the minimal policy satisfies every constraint.
pub fn check_feasible_region(base: &TransformerConfig, fleet: &DeviceFleet) -> Result<()> {
    let minimal = DecompositionPolicy::minimal(base, fleet.len());
    let report = validate_policy(&minimal, base, fleet)?;
    if report.satisfied() {
        return Ok(());
    }
    let ids: Vec<String> = report
        .violations
        .iter()
        .map(|v| match v.device {
            Some(n) => format!("{} on {}", v.constraint.id(), fleet.devices[n].name),
            None => v.constraint.id().to_string(),
        })
        .collect();
    Err(Error::InfeasibleFleet(format!(
        "minimal policy violates {}",
        ids.join(", ")
    )))
}

/// Draws a random feasible policy: dimensions uniformly per sub-model, shared
/// budgets shrunk proportionally, then per-device caps repaired by shrinking.
pub fn sample_policy<R: Rng + ?Sized>(
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    rng: &mut R,
) -> Result<DecompositionPolicy> {
    check_feasible_region(base, fleet)?;
    let dh = base.head_dim();
    let drafts: Vec<UniformSubModel> = (0..fleet.len())
        .map(|_| UniformSubModel {
            layers: rng.random_range(1..=base.layers),
            embed_dim: rng.random_range(1..=base.heads) * dh,
            heads: rng.random_range(1..=base.heads),
            mlp_dim: rng.random_range(1..=base.mlp_dim),
        })
        .collect();
    repair(drafts, base, fleet, rng)
}

/// Shrinks draft dimensions until the policy satisfies C1..C6.
pub fn repair<R: Rng + ?Sized>(
    mut drafts: Vec<UniformSubModel>,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    rng: &mut R,
) -> Result<DecompositionPolicy> {
    if drafts.len() != fleet.len() {
        return Err(Error::MismatchedFleet {
            policy: drafts.len(),
            fleet: fleet.len(),
        });
    }
    let dh = base.head_dim();
    for d in &mut drafts {
        d.layers = d.layers.clamp(1, base.layers);
        d.embed_dim = (d.embed_dim / dh).clamp(1, base.heads) * dh;
        d.heads = d.heads.clamp(1, base.heads);
        d.mlp_dim = d.mlp_dim.clamp(1, base.mlp_dim);
    }

    // Shared budgets (C2..C4); every sub-model is present at layer 0, which is the binding layer.
    let mut units: Vec<usize> = drafts.iter().map(|d| d.embed_dim / dh).collect();
    shrink_to_budget(&mut units, base.heads)?;
    let mut heads: Vec<usize> = drafts.iter().map(|d| d.heads).collect();
    shrink_to_budget(&mut heads, base.heads)?;
    let mut mlp: Vec<usize> = drafts.iter().map(|d| d.mlp_dim).collect();
    shrink_to_budget(&mut mlp, base.mlp_dim)?;
    for (i, d) in drafts.iter_mut().enumerate() {
        d.embed_dim = units[i] * dh;
        d.heads = heads[i];
        d.mlp_dim = mlp[i];
    }

    let mut attempts = 0usize;
    for (d, dev) in drafts.iter_mut().zip(&fleet.devices) {
        while !d.fits(base, dev) {
            attempts += 1;
            if attempts > MAX_REPAIR_ATTEMPTS {
                return Err(Error::InfeasibleFleet(format!(
                    "could not repair a sample for `{}` within {MAX_REPAIR_ATTEMPTS} attempts",
                    dev.name
                )));
            }
            let shrinkable: Vec<usize> = [d.layers, d.embed_dim / dh, d.heads, d.mlp_dim]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 1)
                .map(|(i, _)| i)
                .collect();
            if shrinkable.is_empty() {
                return Err(Error::InfeasibleFleet(format!(
                    "minimal sub-model does not fit on `{}`",
                    dev.name
                )));
            }
            let factor = rng.random_range(0.5..0.95);
            let shrink = |v: usize| ((v as f64 * factor).floor() as usize).clamp(1, v - 1);
            match shrinkable[rng.random_range(0..shrinkable.len())] {
                0 => d.layers = shrink(d.layers),
                1 => d.embed_dim = shrink(d.embed_dim / dh) * dh,
                2 => d.heads = shrink(d.heads),
                _ => d.mlp_dim = shrink(d.mlp_dim),
            }
        }
    }

    Ok(DecompositionPolicy::new(
        drafts.into_iter().map(UniformSubModel::to_config).collect(),
    ))
}

/// Scales `values` down proportionally (each >= 1) until their sum fits `budget`.
fn shrink_to_budget(values: &mut [usize], budget: usize) -> Result<()> {
    if values.len() > budget {
        return Err(Error::InfeasibleFleet(format!(
            "{} sub-models cannot share a budget of {budget}",
            values.len()
        )));
    }
    let total: usize = values.iter().sum();
    if total <= budget {
        return Ok(());
    }
    let scale = budget as f64 / total as f64;
    for v in values.iter_mut() {
        *v = ((*v as f64 * scale).floor() as usize).max(1);
    }
    while values.iter().sum::<usize>() > budget {
        // the largest entry is > 1 here since len <= budget
        let (i, _) = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        values[i] -= 1;
    }
    Ok(())
}

/// Optional per-layer importance scores used to pick which heads and MLP
/// neurons survive. Indexed `[layer][head]` and `[layer][neuron]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub heads: Vec<Vec<f64>>,
    pub neurons: Vec<Vec<f64>>,
}

/// Which slices of base layer `index` a sub-model keeps. Heads and neurons are
/// listed in descending importance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub index: usize,
    pub heads: Vec<usize>,
    pub neurons: Vec<usize>,
}

/// Structural description of one sub-model carved out of the base weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubModelLayout {
    pub embed: Range<usize>,
    pub layers: Vec<LayerSlice>,
}

/// Top `k` indices by descending score; ties and missing scores fall back to index order.
fn top_k(scores: Option<&Vec<f64>>, total: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    if let Some(s) = scores.filter(|s| s.len() == total) {
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    }
    idx.truncate(k);
    idx
}

/// Maps each sub-model onto slices of the base model: the first `l_n` blocks,
/// the most important heads and neurons per block, and the leading `d_n`
/// embedding dimensions.
pub fn decompose(
    base: &TransformerConfig,
    policy: &DecompositionPolicy,
    fleet: &DeviceFleet,
    importance: Option<&Importance>,
) -> Result<Vec<SubModelLayout>> {
    let report = validate_policy(policy, base, fleet)?;
    if !report.satisfied() {
        return Err(Error::InfeasiblePolicy(report));
    }
    Ok(policy
        .sub_models
        .iter()
        .map(|cfg| SubModelLayout {
            embed: 0..cfg.embed_dim,
            layers: (0..cfg.layers())
                .map(|k| LayerSlice {
                    index: k,
                    heads: top_k(importance.and_then(|i| i.heads.get(k)), base.heads, cfg.heads[k]),
                    neurons: top_k(
                        importance.and_then(|i| i.neurons.get(k)),
                        base.mlp_dim,
                        cfg.mlp_dims[k],
                    ),
                })
                .collect(),
        })
        .collect())
}
