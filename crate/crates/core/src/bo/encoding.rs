//! Fixed-length vector form of a policy: `(l/L, d_n/d, mean_h/h, mean_D/D)`
//! per sub-model, every component in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{self, DecompositionPolicy, DeviceFleet, TransformerConfig, UniformSubModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EncodedPolicy(pub Vec<f64>);

impl EncodedPolicy {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Lexicographic comparison used to break ties deterministically.
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(self.0.len().cmp(&other.0.len()))
    }
}

pub fn encode(policy: &DecompositionPolicy, base: &TransformerConfig) -> EncodedPolicy {
    EncodedPolicy(
        policy
            .sub_models
            .iter()
            .flat_map(|cfg| {
                [
                    cfg.layers() as f64 / base.layers as f64,
                    cfg.embed_dim() as f64 / base.embed_dim as f64,
                    cfg.mean_heads() / base.heads as f64,
                    cfg.mean_mlp_dim() / base.mlp_dim as f64,
                ]
            })
            .collect(),
    )
}

/// Rounds each block back to a constant-per-layer sub-model; inputs outside
/// `[0, 1]` are clamped and the embedding snaps to a multiple of the head width.
pub fn decode_drafts(x: &EncodedPolicy, base: &TransformerConfig) -> Result<Vec<UniformSubModel>> {
    if x.is_empty() || !x.len().is_multiple_of(4) {
        return Err(Error::ShapeMismatch(format!(
            "encoded policy length {} is not a positive multiple of 4",
            x.len()
        )));
    }
    let snap = |v: f64, max: usize| ((v.clamp(0.0, 1.0) * max as f64).round() as usize).clamp(1, max);
    Ok(x.0
        .chunks_exact(4)
        .map(|c| UniformSubModel {
            layers: snap(c[0], base.layers),
            embed_dim: snap(c[1], base.heads) * base.head_dim(),
            heads: snap(c[2], base.heads),
            mlp_dim: snap(c[3], base.mlp_dim),
        })
        .collect())
}

/// Decodes and repairs into a feasible policy. Feasible constant-per-layer
/// policies round-trip unchanged.
pub fn decode<R: Rng + ?Sized>(
    x: &EncodedPolicy,
    base: &TransformerConfig,
    fleet: &DeviceFleet,
    rng: &mut R,
) -> Result<DecompositionPolicy> {
    arch::repair(decode_drafts(x, base)?, base, fleet, rng)
}
