//! Model parameter vector `(beta, theta, omega, sigma^2)` and its flat layout.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeppError};
use crate::events::MarkSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Background coefficients, one per covariate (intercept first).
    pub beta: Vec<f64>,
    /// Productivity per mark: expected target events triggered by one event of that mark.
    pub theta: Vec<f64>,
    /// Mean temporal decay (scale, in time units).
    pub omega: f64,
    /// Squared spatial bandwidth (length units squared).
    pub sigma2: f64,
    /// Minimum triggering distance; pairs closer than this do not excite.
    #[serde(default)]
    pub delta: f64,
}

impl ModelParams {
    pub fn validate(&self, n_covariates: usize, n_marks: usize) -> Result<()> {
        let fail = |msg: String| Err(SeppError::InvalidInput(msg));
        if self.beta.len() != n_covariates {
            return fail(format!(
                "beta has {} entries, covariate map has {n_covariates}",
                self.beta.len()
            ));
        }
        if self.theta.len() != n_marks {
            return fail(format!("theta has {} entries, {n_marks} marks declared", self.theta.len()));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return fail(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return fail(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return fail(format!("delta must be non-negative, got {}", self.delta));
        }
        if self.theta.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return fail(format!("theta must be non-negative: {:?}", self.theta));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return fail(format!("beta must be finite: {:?}", self.beta));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Gaussian mass outside the delta-ball, `exp(-delta^2 / 2 sigma^2)`.
    pub fn spatial_mass(&self) -> f64 {
        (-self.delta * self.delta / (2.0 * self.sigma2)).exp()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_beta: self.beta.len(),
            n_theta: self.theta.len(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.beta
            .iter()
            .chain(&self.theta)
            .copied()
            .chain([self.omega, self.sigma2])
            .collect()
    }

    /// Rebuilds from a flat vector with this parameter set's layout and delta.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        let l = self.layout();
        assert_eq!(v.len(), l.len(), "flat parameter vector has wrong length");
        Self {
            beta: v[..l.n_beta].to_vec(),
            theta: v[l.n_beta..l.n_beta + l.n_theta].to_vec(),
            omega: v[l.omega()],
            sigma2: v[l.sigma2()],
            delta: self.delta,
        }
    }

    /// Largest relative change over all parameters (absolute for entries near zero).
    pub fn max_rel_change(&self, other: &Self) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }
}

/// Positions of each parameter in the flat vector `[beta.., theta.., omega, sigma2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_beta: usize,
    pub n_theta: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.n_beta + self.n_theta + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn beta(&self, k: usize) -> usize {
        k
    }

    pub fn theta(&self, m: usize) -> usize {
        self.n_beta + m
    }

    pub fn omega(&self) -> usize {
        self.n_beta + self.n_theta
    }

    pub fn sigma2(&self) -> usize {
        self.n_beta + self.n_theta + 1
    }

    pub fn is_triggering(&self, idx: usize) -> bool {
        idx >= self.n_beta
    }

    /// Human-readable names, e.g. `beta[intercept]`, `theta[burglary]`, `omega`, `sigma2`.
    pub fn names(&self, covariates: &[String], marks: &MarkSet) -> Vec<String> {
        covariates
            .iter()
            .map(|c| format!("beta[{c}]"))
            .chain(marks.names().iter().map(|m| format!("theta[{m}]")))
            .chain(["omega".to_string(), "sigma2".to_string()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_roundtrip_and_layout() {
        let p = ModelParams {
            beta: vec![-1.0, 2.0],
            theta: vec![0.5, 0.1],
            omega: 7.0,
            sigma2: 16.0,
            delta: 0.0,
        };
        let v = p.to_vec();
        assert_eq!(v, vec![-1.0, 2.0, 0.5, 0.1, 7.0, 16.0]);
        assert_eq!(p.with_vec(&v), p);
        let l = p.layout();
        assert_eq!((l.theta(1), l.omega(), l.sigma2(), l.len()), (3, 4, 5, 6));
        p.validate(2, 2).unwrap();
        assert!(p.validate(3, 2).is_err());
        let bad = ModelParams { omega: 0.0, ..p };
        assert!(bad.validate(2, 2).is_err());
    }
}
