//! Expected improvement and candidate-pool maximization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::encoding::{decode, encode, EncodedPolicy};
use super::gp::GpState;
use crate::arch::{sample_policy, DecompositionPolicy, DeviceFleet, TransformerConfig};
use crate::error::{Error, Result};

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a minimization objective:
/// `(best - mu) Phi(z) + sigma phi(z)` with `z = (best - mu) / sigma`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = best - mu;
    if sigma.is_nan() || sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Fresh draws from the feasible sampler.
    pub samples: usize,
    /// Gaussian perturbations of the incumbent's encoding.
    pub perturbations: usize,
    /// Standard deviation of each perturbation, in encoded units.
    pub perturb_sigma: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            perturbations: 32,
            perturb_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub policy: DecompositionPolicy,
    pub encoding: EncodedPolicy,
    pub ei: f64,
}

/// Scores every candidate by EI under `state` and returns the maximizer;
/// ties go to the lexicographically lowest encoding.
pub fn propose_from_pool(
    state: &GpState,
    candidates: Vec<DecompositionPolicy>,
    base: &TransformerConfig,
) -> Result<Proposal> {
    let (_, best) = state.incumbent().ok_or(Error::EmptyState)?;
    let scored: Vec<(EncodedPolicy, f64)> = candidates
        .par_iter()
        .map(|p| {
            let x = encode(p, base);
            let (mu, var) = state.predict(&x)?;
            Ok((x, expected_improvement(mu, var.sqrt(), best)))
        })
        .collect::<Result<_>>()?;
    let winner = scored
        .iter()
        .enumerate()
        .reduce(|a, b| match b.1 .1.total_cmp(&a.1 .1) {
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Equal if b.1 .0.lex_cmp(&a.1 .0).is_lt() => b,
            std::cmp::Ordering::Equal => a,
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidConfig("candidate pool is empty".into()))?;
    let (encoding, ei) = scored.into_iter().nth(winner).expect("index from enumerate");
    Ok(Proposal {
        policy: candidates.into_iter().nth(winner).expect("index from enumerate"),
        encoding,
        ei,
    })
}

/// Draws the candidate pool: `samples` feasible policies plus
/// `perturbations` repaired Gaussian moves around the incumbent.
pub fn candidate_pool<R: Rng + ?Sized>(
    state: &GpState,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    pool: &PoolConfig,
    rng: &mut R,
) -> Result<Vec<DecompositionPolicy>> {
    let mut out = Vec::with_capacity(pool.samples + pool.perturbations);
    for _ in 0..pool.samples {
        out.push(sample_policy(base, fleet, rng)?);
    }
    if let Some((incumbent, _)) = state.incumbent() {
        let noise = Normal::new(0.0, pool.perturb_sigma)
            .map_err(|e| Error::InvalidConfig(format!("perturbation sigma: {e}")))?;
        for _ in 0..pool.perturbations {
            let moved = EncodedPolicy(incumbent.0.iter().map(|v| v + noise.sample(rng)).collect());
            out.push(decode(&moved, base, fleet, rng)?);
        }
    }
    Ok(out)
}

/// Next policy to evaluate: the EI maximizer over a freshly drawn pool.
pub fn propose_next<R: Rng + ?Sized>(
    state: &GpState,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    pool: &PoolConfig,
    rng: &mut R,
) -> Result<Proposal> {
    if state.is_empty() {
        return Err(Error::EmptyState);
    }
    let candidates = candidate_pool(state, base, fleet, pool, rng)?;
    propose_from_pool(state, candidates, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bo::gp::GpConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ei_limits() {
        assert_eq!(expected_improvement(2.0, 0.0, 3.0), 1.0);
        assert_eq!(expected_improvement(4.0, 0.0, 3.0), 0.0);
        let v = expected_improvement(1.0, 1.0, 1.0);
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!(expected_improvement(1e6, 1e-3, 0.0) >= 0.0);
    }

    #[test]
    fn pool_of_one_and_identical_pools() {
        let base = TransformerConfig::deit_base();
        let fleet = DeviceFleet::example();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sample_policy(&base, &fleet, &mut rng).unwrap();
        let b = sample_policy(&base, &fleet, &mut rng).unwrap();
        let state = GpState::new(GpConfig::default()).update(encode(&a, &base), 1.0).unwrap();
        assert_eq!(propose_from_pool(&state, vec![b.clone()], &base).unwrap().policy, b);
        assert_eq!(propose_from_pool(&state, vec![b.clone(); 4], &base).unwrap().policy, b);
        assert!(propose_from_pool(&state, vec![], &base).is_err());
        assert!(matches!(
            propose_next(&GpState::new(GpConfig::default()), &base, &fleet, &PoolConfig::default(), &mut rng),
            Err(Error::EmptyState)
        ));
    }

    #[test]
    fn proposal_is_deterministic() {
        let base = TransformerConfig::deit_base();
        let fleet = DeviceFleet::example();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = GpState::new(GpConfig::default());
        for i in 0..4 {
            let p = sample_policy(&base, &fleet, &mut rng).unwrap();
            state = state.update(encode(&p, &base), i as f64).unwrap();
        }
        let pool = PoolConfig {
            samples: 16,
            perturbations: 4,
            perturb_sigma: 0.1,
        };
        let run = |seed| propose_next(&state, &base, &fleet, &pool, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(run(9), run(9));
    }
}
