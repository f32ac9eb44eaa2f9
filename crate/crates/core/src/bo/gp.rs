//! Zero-mean Gaussian process with a Matern-3/2 kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::encoding::EncodedPolicy;
use crate::error::{Error, Result};

/// Diagonal jitter tried, in order, when the Gram factorization fails.
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// `(1 + sqrt(3) r) exp(-sqrt(3) r)` with `r = |a - b| / length_scale`.
pub fn matern_kernel_scaled(a: &[f64], b: &[f64], length_scale: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "kernel inputs must have equal length");
    let r = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / length_scale;
    let s = 3f64.sqrt() * r;
    (1.0 + s) * (-s).exp()
}

/// Matern kernel with smoothness 3/2 and unit length scale.
pub fn matern_kernel(a: &EncodedPolicy, b: &EncodedPolicy) -> f64 {
    matern_kernel_scaled(&a.0, &b.0, 1.0)
}

pub fn gram(xs: &[EncodedPolicy], length_scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xs.len(), |i, j| matern_kernel_scaled(&xs[i].0, &xs[j].0, length_scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Observation noise variance added to the Gram diagonal.
    pub noise: f64,
    pub length_scale: f64,
    /// Fit standardized observations and map predictions back.
    pub standardize: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            noise: 1e-4,
            length_scale: 1.0,
            standardize: true,
        }
    }
}

impl GpConfig {
    /// No noise and no standardization: a textbook zero-mean GP.
    pub fn raw() -> Self {
        Self {
            noise: 0.0,
            length_scale: 1.0,
            standardize: false,
        }
    }
}

/// Immutable posterior state; [`GpState::update`] returns a new state.
#[derive(Debug, Clone)]
pub struct GpState {
    config: GpConfig,
    xs: Vec<EncodedPolicy>,
    ys: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol: DMatrix<f64>,
    /// `(K + noise I)^-1 y` for the (standardized) observations.
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpState {
    pub fn new(config: GpConfig) -> Self {
        Self {
            config,
            xs: Vec::new(),
            ys: Vec::new(),
            y_mean: 0.0,
            y_scale: 1.0,
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
        }
    }

    pub fn fit(config: GpConfig, xs: Vec<EncodedPolicy>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch(format!("{} inputs but {} observations", xs.len(), ys.len())));
        }
        if let Some(first) = xs.first() {
            if xs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::ShapeMismatch("encoded inputs differ in length".into()));
            }
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NumericalFailure("non-finite observation".into()));
        }
        let mut state = Self::new(config);
        if xs.is_empty() {
            return Ok(state);
        }
        let n = ys.len() as f64;
        if config.standardize {
            state.y_mean = ys.iter().sum::<f64>() / n;
            let sd = (ys.iter().map(|y| (y - state.y_mean).powi(2)).sum::<f64>() / n).sqrt();
            state.y_scale = if sd > 1e-12 { sd } else { 1.0 };
        }
        let k = gram(&xs, config.length_scale);
        let (chol, jitter) = factorize(k, config.noise)?;
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - state.y_mean) / state.y_scale));
        let z = chol
            .solve_lower_triangular(&y)
            .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
        state.alpha = chol
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
        state.chol = chol;
        state.jitter = jitter;
        state.xs = xs;
        state.ys = ys;
        Ok(state)
    }

    /// Posterior after additionally observing `y` at `x`. `self` is unchanged.
    pub fn update(&self, x: EncodedPolicy, y: f64) -> Result<Self> {
        let mut xs = self.xs.clone();
        let mut ys = self.ys.clone();
        xs.push(x);
        ys.push(y);
        Self::fit(self.config, xs, ys)
    }

    /// Posterior mean and variance (variance clamped at 0).
    pub fn predict(&self, x: &EncodedPolicy) -> Result<(f64, f64)> {
        if self.xs.is_empty() {
            return Err(Error::EmptyState);
        }
        if x.len() != self.xs[0].len() {
            return Err(Error::ShapeMismatch(format!(
                "query has length {}, observations have {}",
                x.len(),
                self.xs[0].len()
            )));
        }
        let k = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| matern_kernel_scaled(&xi.0, &x.0, self.config.length_scale)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
        let var = (1.0 - v.dot(&v)).max(0.0);
        Ok((mean * self.y_scale + self.y_mean, var * self.y_scale * self.y_scale))
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn inputs(&self) -> &[EncodedPolicy] {
        &self.xs
    }

    pub fn observations(&self) -> &[f64] {
        &self.ys
    }

    pub fn config(&self) -> GpConfig {
        self.config
    }

    /// Extra diagonal jitter the last factorization needed (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lowest observation and its input (first one on ties).
    pub fn incumbent(&self) -> Option<(&EncodedPolicy, f64)> {
        let mut best: Option<usize> = None;
        for (i, y) in self.ys.iter().enumerate() {
            if best.is_none_or(|b| *y < self.ys[b]) {
                best = Some(i);
            }
        }
        best.map(|i| (&self.xs[i], self.ys[i]))
    }
}

fn factorize(k: DMatrix<f64>, noise: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.unpack(), jitter));
        }
    }
    Err(Error::NumericalFailure(format!(
        "Gram matrix of {n} points is not positive definite even with jitter {}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(v: &[f64]) -> EncodedPolicy {
        EncodedPolicy(v.to_vec())
    }

    #[test]
    fn kernel_values() {
        let a = pt(&[0.2, 0.4]);
        assert_eq!(matern_kernel(&a, &a), 1.0);
        let b = pt(&[1.2, 0.4]);
        assert!((matern_kernel(&a, &b) - 0.483_357_724_596_507_7).abs() < 1e-12);
        let far = pt(&[50.0, 0.4]);
        assert!(matern_kernel(&a, &far) < 1e-30);
    }

    #[test]
    fn update_leaves_the_old_state_alone() {
        let s0 = GpState::new(GpConfig::default());
        let s1 = s0.update(pt(&[0.1]), 1.0).unwrap();
        assert_eq!(s0.len(), 0);
        assert_eq!(s1.len(), 1);
        assert!(matches!(s0.predict(&pt(&[0.1])), Err(Error::EmptyState)));
    }

    #[test]
    fn single_point_interpolation_and_prior_reversion() {
        let s = GpState::new(GpConfig::raw()).update(pt(&[0.3, 0.3]), 2.5).unwrap();
        let (m, v) = s.predict(&pt(&[0.3, 0.3])).unwrap();
        assert!((m - 2.5).abs() < 1e-6 && v.abs() < 1e-6);
        let (m, v) = s.predict(&pt(&[40.0, 40.0])).unwrap();
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicates_are_regularized() {
        let s = GpState::new(GpConfig::default())
            .update(pt(&[0.5]), 1.0)
            .unwrap()
            .update(pt(&[0.5]), 2.0)
            .unwrap();
        let (m, _) = s.predict(&pt(&[0.5])).unwrap();
        assert!((m - 1.5).abs() < 1e-3);
        // without noise the duplicate needs jitter from the ladder
        let raw = GpState::fit(GpConfig::raw(), vec![pt(&[0.5]), pt(&[0.5])], vec![1.0, 2.0]).unwrap();
        assert!(raw.jitter() > 0.0);
    }

    #[test]
    fn shape_errors() {
        assert!(GpState::fit(GpConfig::raw(), vec![pt(&[0.1])], vec![]).is_err());
        let s = GpState::new(GpConfig::raw()).update(pt(&[0.1, 0.2]), 1.0).unwrap();
        assert!(matches!(s.predict(&pt(&[0.1])), Err(Error::ShapeMismatch(_))));
        assert!(s.update(pt(&[0.1]), 1.0).is_err());
        assert!(s.update(pt(&[0.3, 0.3]), f64::NAN).is_err());
    }

    #[test]
    fn incumbent_is_first_minimum() {
        let s = GpState::fit(
            GpConfig::default(),
            vec![pt(&[0.0]), pt(&[0.5]), pt(&[1.0])],
            vec![3.0, 1.0, 1.0],
        )
        .unwrap();
        let (x, y) = s.incumbent().unwrap();
        assert_eq!((x.0[0], y), (0.5, 1.0));
    }
}
