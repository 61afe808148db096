//! Poisson log-link regression on aggregated cell counts with exposure.
//!
//! Maximizes `sum_c [y_c (beta . x_c) - E_c exp(beta . x_c)]` by damped Newton
//! steps. Counts may be fractional (expected background counts in the EM).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeppError};
use crate::model::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Convergence threshold on `max |gradient| / max(1, total count)`.
    pub grad_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub coefficients: Vec<f64>,
    /// Square roots of the diagonal of the inverse Fisher information.
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub scaled_gradient: f64,
}

/// Aggregated Poisson regression problem: one row per cell.
#[derive(Debug, Clone)]
pub struct PoissonProblem<'a> {
    pub design: &'a [Vec<f64>],
    pub counts: &'a [f64],
    pub exposure: &'a [f64],
}

impl PoissonProblem<'_> {
    fn n_coef(&self) -> usize {
        self.design.first().map_or(0, Vec::len)
    }

    /// Objective up to the `-log y!` constant.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        self.rows()
            .map(|(x, y, e)| {
                let eta = dot(beta, x);
                y * eta - e * eta.exp()
            })
            .sum()
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64, f64)> + '_ {
        self.design
            .iter()
            .zip(self.counts)
            .zip(self.exposure)
            .filter(|(_, &e)| e > 0.0)
            .map(|((x, &y), &e)| (x.as_slice(), y, e))
    }

    fn gradient_hessian(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.n_coef();
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for (x, y, e) in self.rows() {
            let m = e * dot(beta, x).exp();
            for a in 0..p {
                g[a] += (y - m) * x[a];
                for b in 0..=a {
                    h[(a, b)] += m * x[a] * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (g, h)
    }

    /// Columns that are (numerically) linear combinations of earlier ones.
    pub fn collinear_columns(&self) -> Vec<usize> {
        let p = self.n_coef();
        let rows: Vec<&[f64]> = self.rows().map(|(x, _, _)| x).collect();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut bad = Vec::new();
        for k in 0..p {
            let mut v: Vec<f64> = rows.iter().map(|x| x[k]).collect();
            let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for q in &basis {
                let proj = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0 {
                bad.push(k);
            } else {
                basis.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        bad
    }

    /// Zero-count rows whose fitted rate is negligible next to the largest rate.
    fn separated_rows(&self, beta: &[f64]) -> usize {
        let etas: Vec<(f64, f64)> = self.rows().map(|(x, y, _)| (dot(beta, x), y)).collect();
        let max_eta = etas.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        etas.iter()
            .filter(|(eta, y)| *y == 0.0 && eta - max_eta < -18.0)
            .count()
    }

    pub fn solve(&self, init: Option<&[f64]>, opts: NewtonOptions) -> Result<PoissonFit> {
        let p = self.n_coef();
        if p == 0 {
            return Err(SeppError::InvalidInput("empty design".into()));
        }
        if self.design.len() != self.counts.len() || self.design.len() != self.exposure.len() {
            return Err(SeppError::InvalidInput("design, counts and exposure lengths differ".into()));
        }
        if self.design.iter().any(|x| x.len() != p) {
            return Err(SeppError::InvalidInput("ragged design matrix".into()));
        }
        let total: f64 = self.rows().map(|(_, y, _)| y).sum();
        let exposure: f64 = self.rows().map(|(_, _, e)| e).sum();
        if !(total > 0.0) || !(exposure > 0.0) {
            return Err(SeppError::InvalidInput(
                "Poisson regression needs a positive total count and exposure".into(),
            ));
        }
        let bad = self.collinear_columns();
        if !bad.is_empty() {
            return Err(SeppError::SingularDesign { columns: bad });
        }
        let scale = total.max(1.0);
        let mut beta: Vec<f64> = match init {
            Some(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => b.to_vec(),
            _ => {
                let mut b = vec![0.0; p];
                // Intercept-like start: log of the overall rate on the first column.
                b[0] = (total / exposure).ln();
                b
            }
        };
        let mut f = self.objective(&beta);
        if !f.is_finite() {
            beta = vec![0.0; p];
            beta[0] = (total / exposure).ln();
            f = self.objective(&beta);
        }
        for iter in 0..=opts.max_iter {
            let (g, h) = self.gradient_hessian(&beta);
            let gnorm = g.amax() / scale;
            if gnorm < opts.grad_tol {
                let cov = h
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or(SeppError::SingularDesign { columns: Vec::new() })?;
                let separated = self.separated_rows(&beta);
                if separated > 0 {
                    return Err(SeppError::Separation { rows: separated });
                }
                return Ok(PoissonFit {
                    std_errors: (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
                    coefficients: beta,
                    log_likelihood: f,
                    iterations: iter,
                    scaled_gradient: gnorm,
                });
            }
            if iter == opts.max_iter {
                break;
            }
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => return Err(SeppError::SingularDesign { columns: Vec::new() }),
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                let fc = self.objective(&cand);
                if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                    beta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(SeppError::NoConvergence {
            solver: "Poisson Newton",
            iterations: opts.max_iter,
            last: beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_closed_form() {
        let design = vec![vec![1.0]];
        let fit = PoissonProblem {
            design: &design,
            counts: &[40.0],
            exposure: &[8.0],
        }
        .solve(None, NewtonOptions::default())
        .unwrap();
        assert!((fit.coefficients[0] - 5f64.ln()).abs() < 1e-10);
        assert!((fit.std_errors[0] - 1.0 / 40f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn saturated_two_cell_closed_form() {
        let design = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let fit = PoissonProblem {
            design: &design,
            counts: &[12.0, 30.0],
            exposure: &[4.0, 5.0],
        }
        .solve(None, NewtonOptions::default())
        .unwrap();
        let b0 = 3f64.ln();
        let b1 = 6f64.ln() - b0;
        assert!((fit.coefficients[0] - b0).abs() < 1e-9);
        assert!((fit.coefficients[1] - b1).abs() < 1e-9);
        // Saturated: var(b1) = 1/y1 + 1/y2.
        assert!((fit.std_errors[1] - (1.0 / 12.0 + 1.0 / 30.0f64).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn collinear_design_rejected() {
        let design = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let err = PoissonProblem {
            design: &design,
            counts: &[1.0, 2.0, 3.0],
            exposure: &[1.0, 1.0, 1.0],
        }
        .solve(None, NewtonOptions::default())
        .unwrap_err();
        assert!(matches!(err, SeppError::SingularDesign { ref columns } if columns == &vec![1]));
    }

    #[test]
    fn separation_detected() {
        let design = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let err = PoissonProblem {
            design: &design,
            counts: &[5.0, 0.0],
            exposure: &[1.0, 1.0],
        }
        .solve(None, NewtonOptions { max_iter: 50, grad_tol: 1e-8 })
        .unwrap_err();
        assert!(matches!(
            err,
            SeppError::Separation { .. } | SeppError::NoConvergence { .. }
        ));
    }
}
