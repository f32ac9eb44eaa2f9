//! Deterministic event-level replay of one inference under four schedules:
//! aggregate-edge (parallel sub-models, one upload, central fusion),
//! pipe-edge (sequential segments), distri-edge (per-layer synchronization
//! through the central node) and single-edge (one device runs everything).
//!
//! A device is *busy* while computing or aggregating. Everything else,
//! including time spent pushing bytes onto its link, counts as idle for
//! utilization and energy; transmission time is reported separately.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::{self, DecompositionPolicy, DeviceFleet, TransformerConfig};
use crate::error::{Error, Result};
use crate::evaluator::{self, BackboneLatency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    AggregateEdge,
    PipeEdge,
    DistriEdge,
    SingleEdge,
}

impl ScheduleMode {
    pub const ALL: [ScheduleMode; 4] = [
        ScheduleMode::AggregateEdge,
        ScheduleMode::PipeEdge,
        ScheduleMode::DistriEdge,
        ScheduleMode::SingleEdge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::AggregateEdge => "aggregate-edge",
            ScheduleMode::PipeEdge => "pipe-edge",
            ScheduleMode::DistriEdge => "distri-edge",
            ScheduleMode::SingleEdge => "single-edge",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_suffix("-edge").unwrap_or(&key);
        match key {
            "aggregate" => Ok(ScheduleMode::AggregateEdge),
            "pipe" => Ok(ScheduleMode::PipeEdge),
            "distri" => Ok(ScheduleMode::DistriEdge),
            "single" => Ok(ScheduleMode::SingleEdge),
            _ => Err(Error::InvalidConfig(format!(
                "unknown mode `{s}` (expected aggregate, pipe, distri or single)"
            ))),
        }
    }
}

/// Parallel backbones, one upload each, then fusion on the central node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateProfile {
    pub backbone_ms: Vec<f64>,
    /// Feature map size per device; the central node's entry is never sent.
    pub feature_bits: Vec<f64>,
    pub aggregation_ms: f64,
}

/// Contiguous segments run one after another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineProfile {
    /// Device executing each stage, in execution order.
    pub order: Vec<usize>,
    pub segment_ms: Vec<f64>,
    /// Activations handed from stage `k` to `k + 1`, sent over stage `k`'s link.
    pub boundary_bits: Vec<f64>,
}

/// Every layer is split across devices and synchronized through the central node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedProfile {
    pub layers: usize,
    /// Per-device compute time of one layer slice.
    pub layer_ms: Vec<f64>,
    /// Per-device activation share uploaded after each layer.
    pub sync_bits: Vec<f64>,
    /// Work on the central node after the last layer.
    pub final_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleProfile {
    pub device: usize,
    pub compute_ms: f64,
}

/// Per-mode timing inputs; a mode can only be simulated if its profile is present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub aggregate: Option<AggregateProfile>,
    pub pipeline: Option<PipelineProfile>,
    pub distributed: Option<DistributedProfile>,
    pub single: Option<SingleProfile>,
}

impl Workload {
    /// Splits `total_flops` of work across the fleet in proportion to device
    /// compute, so every participant finishes its share at the same time.
    /// Activations are `seq_len x dim` values of `bits_per_value` bits; each
    /// device's share of the width is also proportional to its compute.
    /// Single-edge runs everything on the slowest device.
    pub fn balanced(
        fleet: &DeviceFleet,
        total_flops: f64,
        layers: usize,
        seq_len: usize,
        dim: usize,
        bits_per_value: f64,
    ) -> Result<Self> {
        if !(total_flops > 0.0 && total_flops.is_finite()) || layers == 0 {
            return Err(Error::InvalidWorkload("total work and layer count must be positive".into()));
        }
        let n = fleet.len();
        let capacity: f64 = fleet.devices.iter().map(|d| d.compute).sum();
        let share: Vec<f64> = fleet.devices.iter().map(|d| d.compute / capacity).collect();
        let act_bits = seq_len as f64 * dim as f64 * bits_per_value;
        let part_bits: Vec<f64> = share.iter().map(|s| s * act_bits).collect();
        let part_ms: Vec<f64> = fleet
            .devices
            .iter()
            .zip(&share)
            .map(|(d, s)| s * total_flops / d.compute)
            .collect();
        let central = fleet.central_device();
        let fuse_ms = if n == 1 {
            0.0
        } else {
            evaluator::phase3_latency(seq_len, (share[fleet.central] * dim as f64).round() as usize, dim, central.compute)
        };
        let slowest = (0..n)
            .min_by(|&a, &b| fleet.devices[a].compute.total_cmp(&fleet.devices[b].compute))
            .expect("fleet is non-empty");
        Ok(Self {
            aggregate: Some(AggregateProfile {
                backbone_ms: part_ms.clone(),
                feature_bits: part_bits.clone(),
                aggregation_ms: fuse_ms,
            }),
            pipeline: Some(PipelineProfile {
                order: (0..n).collect(),
                segment_ms: part_ms.clone(),
                boundary_bits: vec![act_bits; n - 1],
            }),
            distributed: Some(DistributedProfile {
                layers,
                layer_ms: part_ms.iter().map(|t| t / layers as f64).collect(),
                sync_bits: part_bits,
                final_ms: fuse_ms,
            }),
            single: Some(SingleProfile {
                device: slowest,
                compute_ms: total_flops / fleet.devices[slowest].compute,
            }),
        })
    }

    /// Aggregate-edge timing for `policy` (same inputs as the evaluator's
    /// latency model); the three baselines execute the full base model.
    pub fn from_policy(
        policy: &DecompositionPolicy,
        base: &TransformerConfig,
        fleet: &DeviceFleet,
        source: &dyn BackboneLatency,
        bits_per_value: f64,
    ) -> Result<Self> {
        let b = evaluator::latency_breakdown(policy, base, fleet, source, bits_per_value)?;
        let full = arch::flops(&base.full_sub_model(), base);
        let mut w = Self::balanced(fleet, full, base.layers, base.seq_len, base.embed_dim, bits_per_value)?;
        w.aggregate = Some(AggregateProfile {
            backbone_ms: b.backbone_ms,
            feature_bits: policy
                .sub_models
                .iter()
                .map(|c| evaluator::feature_bits(base.seq_len, c.embed_dim(), bits_per_value))
                .collect(),
            aggregation_ms: b.aggregate_ms,
        });
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Uploads to the central node share one ingress and go one at a time, in device order.
    pub serialized_ingress: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Compute,
    Transmit,
    Aggregate,
    Idle,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Compute => "compute",
            Phase::Transmit => "transmit",
            Phase::Aggregate => "aggregate",
            Phase::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub device: usize,
    pub phase: Phase,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl TimelineEvent {
    pub fn duration(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub device: usize,
    pub name: String,
    /// Computing or aggregating.
    pub busy_ms: f64,
    /// `end_to_end_ms - busy_ms`; includes `transmit_ms`.
    pub idle_ms: f64,
    pub transmit_ms: f64,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: ScheduleMode,
    pub end_to_end_ms: f64,
    /// Participating devices only.
    pub devices: Vec<DeviceStats>,
    /// Share of `[0, end]` during which at least one link is busy.
    pub transmission_fraction: f64,
    pub total_energy_mj: f64,
    /// Sorted by device, then start time; tiles `[0, end]` per device.
    pub timeline: Vec<TimelineEvent>,
}

impl SimReport {
    /// Idle time summed over devices divided by `devices x end`.
    pub fn idle_share(&self) -> f64 {
        if self.end_to_end_ms <= 0.0 {
            return 0.0;
        }
        let idle: f64 = self.devices.iter().map(|d| d.idle_ms).sum();
        idle / (self.devices.len() as f64 * self.end_to_end_ms)
    }

    pub fn device(&self, index: usize) -> Option<&DeviceStats> {
        self.devices.iter().find(|d| d.device == index)
    }

    /// Rows `device,phase,start_ms,end_ms` with device names.
    pub fn write_timeline_csv<W: Write>(&self, fleet: &DeviceFleet, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["device", "phase", "start_ms", "end_ms"])?;
        for e in &self.timeline {
            w.write_record([
                fleet.devices[e.device].name.clone(),
                e.phase.name().to_string(),
                format!("{}", e.start_ms),
                format!("{}", e.end_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-device busy/idle energy in mJ (mW x ms x 1e-3).
pub fn device_energy(busy_ms: f64, idle_ms: f64, busy_mw: f64, idle_mw: f64) -> f64 {
    (busy_ms * busy_mw + idle_ms * idle_mw) * 1e-3
}

/// Total energy of a report in mJ.
pub fn energy(report: &SimReport, fleet: &DeviceFleet) -> f64 {
    report
        .devices
        .iter()
        .map(|d| {
            let spec = &fleet.devices[d.device];
            device_energy(d.busy_ms, d.idle_ms, spec.busy_power, spec.idle_power)
        })
        .sum()
}

fn check_times(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidWorkload(format!("{what} must be finite and >= 0")));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidWorkload(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

/// Upload start times: dedicated links start when ready; a shared ingress
/// serves requests in device order, each after the previous one finishes.
fn schedule_uploads(ready: &[(usize, f64, f64)], serialized: bool) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::with_capacity(ready.len());
    let mut ingress_free = 0.0f64;
    for &(dev, at, dur) in ready {
        let start = if serialized { at.max(ingress_free) } else { at };
        ingress_free = start + dur;
        out.push((dev, start, start + dur));
    }
    out
}

fn simulate_aggregate(p: &AggregateProfile, fleet: &DeviceFleet, params: &SimParams) -> Result<Vec<TimelineEvent>> {
    let n = fleet.len();
    check_len("backbone_ms", p.backbone_ms.len(), n)?;
    check_len("feature_bits", p.feature_bits.len(), n)?;
    check_times("aggregate-edge times", &p.backbone_ms)?;
    check_times("feature sizes", &p.feature_bits)?;
    check_times("aggregation time", &[p.aggregation_ms])?;
    let mut events = Vec::new();
    let mut uploads = Vec::new();
    let mut arrival = f64::NEG_INFINITY;
    for (d, &t1) in p.backbone_ms.iter().enumerate() {
        events.push(TimelineEvent {
            device: d,
            phase: Phase::Compute,
            start_ms: 0.0,
            end_ms: t1,
        });
        if d == fleet.central {
            arrival = arrival.max(t1 + 0.0);
        } else {
            uploads.push((d, t1, evaluator::phase2_latency(p.feature_bits[d], fleet.devices[d].bandwidth)));
        }
    }
    for (d, start, end) in schedule_uploads(&uploads, params.serialized_ingress) {
        // same arithmetic as the closed form when links are dedicated
        let done = if params.serialized_ingress {
            end
        } else {
            p.backbone_ms[d] + evaluator::phase2_latency(p.feature_bits[d], fleet.devices[d].bandwidth)
        };
        arrival = arrival.max(done);
        events.push(TimelineEvent {
            device: d,
            phase: Phase::Transmit,
            start_ms: start,
            end_ms: done,
        });
    }
    events.push(TimelineEvent {
        device: fleet.central,
        phase: Phase::Aggregate,
        start_ms: arrival,
        end_ms: arrival + p.aggregation_ms,
    });
    Ok(events)
}

fn simulate_pipeline(p: &PipelineProfile, fleet: &DeviceFleet) -> Result<Vec<TimelineEvent>> {
    if p.order.is_empty() {
        return Err(Error::InvalidWorkload("pipeline has no stages".into()));
    }
    check_len("segment_ms", p.segment_ms.len(), p.order.len())?;
    check_len("boundary_bits", p.boundary_bits.len(), p.order.len() - 1)?;
    check_times("segment times", &p.segment_ms)?;
    check_times("boundary sizes", &p.boundary_bits)?;
    if let Some(&bad) = p.order.iter().find(|&&d| d >= fleet.len()) {
        return Err(Error::InvalidWorkload(format!("stage device {bad} is not in the fleet")));
    }
    let mut events = Vec::new();
    let mut t = 0.0;
    for (k, (&dev, &seg)) in p.order.iter().zip(&p.segment_ms).enumerate() {
        events.push(TimelineEvent {
            device: dev,
            phase: Phase::Compute,
            start_ms: t,
            end_ms: t + seg,
        });
        t += seg;
        if let Some(&bits) = p.boundary_bits.get(k) {
            let next = p.order[k + 1];
            if next != dev {
                let dt = evaluator::phase2_latency(bits, fleet.devices[dev].bandwidth);
                events.push(TimelineEvent {
                    device: dev,
                    phase: Phase::Transmit,
                    start_ms: t,
                    end_ms: t + dt,
                });
                t += dt;
            }
        }
    }
    Ok(events)
}

fn simulate_distributed(p: &DistributedProfile, fleet: &DeviceFleet, params: &SimParams) -> Result<Vec<TimelineEvent>> {
    let n = fleet.len();
    if p.layers == 0 {
        return Err(Error::InvalidWorkload("distributed profile needs at least one layer".into()));
    }
    check_len("layer_ms", p.layer_ms.len(), n)?;
    check_len("sync_bits", p.sync_bits.len(), n)?;
    check_times("layer times", &p.layer_ms)?;
    check_times("sync sizes", &p.sync_bits)?;
    check_times("final time", &[p.final_ms])?;
    let total_bits: f64 = p.sync_bits.iter().sum();
    let mut events = Vec::new();
    let mut t = 0.0f64;
    for _ in 0..p.layers {
        let mut synced = t;
        let mut uploads = Vec::new();
        for (d, &ms) in p.layer_ms.iter().enumerate() {
            events.push(TimelineEvent {
                device: d,
                phase: Phase::Compute,
                start_ms: t,
                end_ms: t + ms,
            });
            if d == fleet.central {
                synced = synced.max(t + ms);
            } else {
                uploads.push((d, t + ms, evaluator::phase2_latency(p.sync_bits[d], fleet.devices[d].bandwidth)));
            }
        }
        for (d, start, end) in schedule_uploads(&uploads, params.serialized_ingress) {
            synced = synced.max(end);
            events.push(TimelineEvent {
                device: d,
                phase: Phase::Transmit,
                start_ms: start,
                end_ms: end,
            });
        }
        // the central node returns every other device's share over that device's link
        let broadcast = (0..n)
            .filter(|&d| d != fleet.central)
            .map(|d| evaluator::phase2_latency(total_bits - p.sync_bits[d], fleet.devices[d].bandwidth))
            .fold(0.0, f64::max);
        if broadcast > 0.0 {
            events.push(TimelineEvent {
                device: fleet.central,
                phase: Phase::Transmit,
                start_ms: synced,
                end_ms: synced + broadcast,
            });
        }
        t = synced + broadcast;
    }
    events.push(TimelineEvent {
        device: fleet.central,
        phase: Phase::Aggregate,
        start_ms: t,
        end_ms: t + p.final_ms,
    });
    Ok(events)
}

fn simulate_single(p: &SingleProfile, fleet: &DeviceFleet) -> Result<Vec<TimelineEvent>> {
    if p.device >= fleet.len() {
        return Err(Error::InvalidWorkload(format!("device {} is not in the fleet", p.device)));
    }
    check_times("single-edge time", &[p.compute_ms])?;
    Ok(vec![TimelineEvent {
        device: p.device,
        phase: Phase::Compute,
        start_ms: 0.0,
        end_ms: p.compute_ms,
    }])
}

/// Fills per-device gaps with idle events and computes the summary.
fn finish(mode: ScheduleMode, mut busy: Vec<TimelineEvent>, fleet: &DeviceFleet) -> SimReport {
    busy.retain(|e| e.end_ms > e.start_ms || e.phase != Phase::Transmit);
    let end = busy.iter().map(|e| e.end_ms).fold(0.0, f64::max);
    let mut participants: Vec<usize> = busy.iter().map(|e| e.device).collect();
    participants.sort_unstable();
    participants.dedup();

    let mut timeline = Vec::new();
    let mut devices = Vec::new();
    for &d in &participants {
        let mut own: Vec<TimelineEvent> = busy.iter().copied().filter(|e| e.device == d).collect();
        own.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
        let mut cursor = 0.0;
        let (mut busy_ms, mut transmit_ms) = (0.0, 0.0);
        for e in own {
            if e.start_ms > cursor {
                timeline.push(TimelineEvent {
                    device: d,
                    phase: Phase::Idle,
                    start_ms: cursor,
                    end_ms: e.start_ms,
                });
            }
            match e.phase {
                Phase::Transmit => transmit_ms += e.duration(),
                _ => busy_ms += e.duration(),
            }
            cursor = cursor.max(e.end_ms);
            timeline.push(e);
        }
        if end > cursor {
            timeline.push(TimelineEvent {
                device: d,
                phase: Phase::Idle,
                start_ms: cursor,
                end_ms: end,
            });
        }
        let idle_ms = end - busy_ms;
        let spec = &fleet.devices[d];
        devices.push(DeviceStats {
            device: d,
            name: spec.name.clone(),
            busy_ms,
            idle_ms,
            transmit_ms,
            energy_mj: device_energy(busy_ms, idle_ms, spec.busy_power, spec.idle_power),
        });
    }

    let mut links: Vec<(f64, f64)> = busy
        .iter()
        .filter(|e| e.phase == Phase::Transmit)
        .map(|e| (e.start_ms, e.end_ms))
        .collect();
    links.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let mut reach = f64::NEG_INFINITY;
    for (s, e) in links {
        let s = s.max(reach);
        if e > s {
            covered += e - s;
        }
        reach = reach.max(e);
    }
    let transmission_fraction = if end > 0.0 { (covered / end).clamp(0.0, 1.0) } else { 0.0 };
    let total_energy_mj = devices.iter().map(|d| d.energy_mj).sum();
    SimReport {
        mode,
        end_to_end_ms: end,
        devices,
        transmission_fraction,
        total_energy_mj,
        timeline,
    }
}

pub fn simulate(workload: &Workload, fleet: &DeviceFleet, mode: ScheduleMode, params: &SimParams) -> Result<SimReport> {
    fleet.validate()?;
    let missing = || Error::InvalidWorkload(format!("workload has no {mode} profile"));
    let events = match mode {
        ScheduleMode::AggregateEdge => simulate_aggregate(workload.aggregate.as_ref().ok_or_else(missing)?, fleet, params)?,
        ScheduleMode::PipeEdge => simulate_pipeline(workload.pipeline.as_ref().ok_or_else(missing)?, fleet)?,
        ScheduleMode::DistriEdge => {
            simulate_distributed(workload.distributed.as_ref().ok_or_else(missing)?, fleet, params)?
        }
        ScheduleMode::SingleEdge => simulate_single(workload.single.as_ref().ok_or_else(missing)?, fleet)?,
    };
    Ok(finish(mode, events, fleet))
}

/// One report per mode, in [`ScheduleMode::ALL`] order.
pub fn compare_modes(workload: &Workload, fleet: &DeviceFleet, params: &SimParams) -> Result<Vec<SimReport>> {
    ScheduleMode::ALL
        .iter()
        .map(|&m| simulate(workload, fleet, m, params))
        .collect()
}

/// Key/value summary rows (`mode,key,value`) for a set of reports.
pub fn write_summary_csv<W: Write>(reports: &[SimReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "key", "value"])?;
    for r in reports {
        let mode = r.mode.name();
        let mut row = |k: String, v: f64| w.write_record([mode.to_string(), k, format!("{v}")]);
        row("end_to_end_ms".into(), r.end_to_end_ms)?;
        row("transmission_fraction".into(), r.transmission_fraction)?;
        row("idle_share".into(), r.idle_share())?;
        row("total_energy_mj".into(), r.total_energy_mj)?;
        for d in &r.devices {
            row(format!("{}.busy_ms", d.name), d.busy_ms)?;
            row(format!("{}.idle_ms", d.name), d.idle_ms)?;
            row(format!("{}.transmit_ms", d.name), d.transmit_ms)?;
            row(format!("{}.energy_mj", d.name), d.energy_mj)?;
        }
    }
    w.flush()?;
    Ok(())
}
