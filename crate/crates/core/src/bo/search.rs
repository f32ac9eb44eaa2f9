//! The search loop: `r` random feasible policies seed the surrogate, then
//! each iteration proposes by expected improvement, evaluates, and updates.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::acquisition::{propose_next, PoolConfig};
use super::encoding::encode;
use super::gp::{GpConfig, GpState};
use crate::arch::{check_feasible_region, sample_policy, DecompositionPolicy};
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, ObjectiveValue};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Random policies evaluated before the surrogate takes over (`r`).
    pub init: usize,
    /// Surrogate-guided iterations (`I_s`).
    pub iterations: usize,
    pub seed: u64,
    pub pool: PoolConfig,
    pub gp: GpConfig,
}

impl SearchConfig {
    pub fn new(init: usize, iterations: usize, seed: u64) -> Self {
        Self {
            init,
            iterations,
            seed,
            pool: PoolConfig::default(),
            gp: GpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// 0-based evaluation index; the first `init` entries are random draws.
    pub iteration: usize,
    pub encoding: Vec<f64>,
    pub degradation: f64,
    pub latency_ms: f64,
    pub psi: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
}

impl RunLog {
    fn push(&mut self, policy: &DecompositionPolicy, value: &ObjectiveValue, evaluator: &Evaluator) {
        let best_so_far = self.entries.last().map_or(value.psi, |e| e.best_so_far.min(value.psi));
        self.entries.push(LogEntry {
            iteration: self.entries.len(),
            encoding: encode(policy, evaluator.base).0,
            degradation: value.degradation,
            latency_ms: value.latency_ms,
            psi: value.psi,
            best_so_far,
        });
    }

    /// CSV with columns `iteration,encoding,l_val,latency_ms,psi,best_so_far`;
    /// the encoding is space-separated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "encoding", "l_val", "latency_ms", "psi", "best_so_far"])?;
        for e in &self.entries {
            let enc: Vec<String> = e.encoding.iter().map(|v| format!("{v}")).collect();
            w.write_record([
                e.iteration.to_string(),
                enc.join(" "),
                format!("{}", e.degradation),
                format!("{}", e.latency_ms),
                format!("{}", e.psi),
                format!("{}", e.best_so_far),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: DecompositionPolicy,
    pub best_value: ObjectiveValue,
    /// Every evaluated policy in log order.
    pub policies: Vec<DecompositionPolicy>,
    pub log: RunLog,
}

struct Tracker<'e, 'a> {
    evaluator: &'e Evaluator<'a>,
    policies: Vec<DecompositionPolicy>,
    values: Vec<ObjectiveValue>,
    log: RunLog,
}

impl<'e, 'a> Tracker<'e, 'a> {
    fn new(evaluator: &'e Evaluator<'a>) -> Self {
        Self {
            evaluator,
            policies: Vec::new(),
            values: Vec::new(),
            log: RunLog::default(),
        }
    }

    fn evaluate(&mut self, policy: DecompositionPolicy) -> Result<ObjectiveValue> {
        let value = self.evaluator.evaluate(&policy)?;
        self.log.push(&policy, &value, self.evaluator);
        self.policies.push(policy);
        self.values.push(value);
        Ok(value)
    }

    fn finish(self) -> Result<SearchResult> {
        let mut best: Option<usize> = None;
        for (i, v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v.psi < self.values[b].psi) {
                best = Some(i);
            }
        }
        let b = best.ok_or_else(|| Error::InvalidConfig("no policies were evaluated".into()))?;
        Ok(SearchResult {
            best: self.policies[b].clone(),
            best_value: self.values[b],
            policies: self.policies,
            log: self.log,
        })
    }
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn proposal_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Best of `draws` feasible random policies. Shares its sampling stream with
/// the initial phase of [`debo_search`].
pub fn random_search(evaluator: &Evaluator, draws: usize, seed: u64) -> Result<SearchResult> {
    check_feasible_region(evaluator.base, evaluator.fleet)?;
    let mut rng = init_rng(seed);
    let mut tracker = Tracker::new(evaluator);
    for _ in 0..draws {
        tracker.evaluate(sample_policy(evaluator.base, evaluator.fleet, &mut rng)?)?;
    }
    tracker.finish()
}

/// Minimizes the evaluator's objective with a GP surrogate. Deterministic
/// given `cfg.seed`.
pub fn debo_search(evaluator: &Evaluator, cfg: &SearchConfig) -> Result<SearchResult> {
    if cfg.init < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 initial policies, got {}", cfg.init)));
    }
    check_feasible_region(evaluator.base, evaluator.fleet)?;
    let base = evaluator.base;
    let fleet = evaluator.fleet;
    let mut tracker = Tracker::new(evaluator);
    let mut state = GpState::new(cfg.gp);

    let mut rng = init_rng(cfg.seed);
    for _ in 0..cfg.init {
        let policy = sample_policy(base, fleet, &mut rng)?;
        let x = encode(&policy, base);
        let value = tracker.evaluate(policy)?;
        state = state.update(x, value.psi)?;
    }

    let mut rng = proposal_rng(cfg.seed);
    for _ in 0..cfg.iterations {
        let proposal = propose_next(&state, base, fleet, &cfg.pool, &mut rng)?;
        let value = tracker.evaluate(proposal.policy)?;
        state = state.update(proposal.encoding, value.psi)?;
    }
    tracker.finish()
}
