//! Round-robin ridge imputation.

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::tabular::TableMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeConfig {
    pub rounds: usize,
    pub lambda: f64,
    pub tol: f64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig { rounds: 10, lambda: 1e-3, tol: 1e-6 }
    }
}

/// Linear model predicting column `target` from every other column.
#[derive(Debug, Clone, PartialEq)]
struct ColumnModel {
    target: usize,
    intercept: f64,
    /// One weight per column; the target's own slot is 0.
    weights: Vec<f64>,
}

impl ColumnModel {
    fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }
}

/// A fitted imputer: initial column means plus the per-round regressions,
/// replayable on rows that took no part in fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeImputer {
    cfg: ImputeConfig,
    means: Vec<f64>,
    rounds: Vec<Vec<ColumnModel>>,
}

impl IterativeImputer {
    /// Fits on `m` and returns the completed matrix.
    pub fn fit(m: &TableMatrix, cfg: ImputeConfig) -> Result<(Self, Vec<f64>)> {
        if cfg.lambda <= 0.0 {
            return Err(Error::invalid("ridge lambda must be positive"));
        }
        let (n, d) = (m.rows, m.cols);
        let mut means = vec![0.0; d];
        for (j, mean) in means.iter_mut().enumerate() {
            let obs: Vec<f64> = (0..n).filter_map(|r| m.get(r, j)).collect();
            if obs.is_empty() {
                warn!("column {j} is entirely missing; filling with 0");
            } else {
                *mean = obs.iter().sum::<f64>() / obs.len() as f64;
            }
        }
        let mut x: Vec<f64> = m.cells.iter().enumerate().map(|(i, c)| c.unwrap_or(means[i % d])).collect();
        let missing_rows: Vec<Vec<usize>> = (0..d).map(|j| (0..n).filter(|&r| m.get(r, j).is_none()).collect()).collect();
        // columns with something to fill and something to learn from
        let targets: Vec<usize> = (0..d).filter(|&j| !missing_rows[j].is_empty() && missing_rows[j].len() < n).collect();

        // running sums over all rows: S = Σ x xᵀ, s = Σ x
        let xm = DMatrix::from_row_slice(n, d, &x);
        let mut gram = xm.transpose() * &xm;
        let mut sums = DVector::from_iterator(d, (0..d).map(|j| xm.column(j).sum()));

        let mut rounds = Vec::new();
        for round in 0..cfg.rounds {
            let mut models = Vec::with_capacity(targets.len());
            let mut max_change: f64 = 0.0;
            for &j in &targets {
                let miss = &missing_rows[j];
                let n_obs = (n - miss.len()) as f64;
                let mrows = DMatrix::from_fn(miss.len(), d, |i, c| x[miss[i] * d + c]);
                let s_obs = &gram - mrows.transpose() * &mrows;
                let v_obs = &sums - DVector::from_fn(d, |c, _| mrows.column(c).sum());
                let mean_obs = &v_obs / n_obs;
                let cov = s_obs - &v_obs * mean_obs.transpose();
                let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
                let k = others.len();
                let mut a = DMatrix::from_fn(k, k, |p, q| cov[(others[p], others[q])]);
                for p in 0..k {
                    a[(p, p)] += cfg.lambda;
                }
                let b = DVector::from_fn(k, |p, _| cov[(others[p], j)]);
                let beta = match a.clone().cholesky() {
                    Some(ch) => ch.solve(&b),
                    None => a.lu().solve(&b).ok_or_else(|| Error::Data(format!("singular ridge system for column {j}")))?,
                };
                let mut weights = vec![0.0; d];
                let mut intercept = mean_obs[j];
                for (p, &o) in others.iter().enumerate() {
                    weights[o] = beta[p];
                    intercept -= beta[p] * mean_obs[o];
                }
                let model = ColumnModel { target: j, intercept, weights };
                for &r in miss {
                    let new = model.predict(&x[r * d..(r + 1) * d]);
                    let old = x[r * d + j];
                    let delta = new - old;
                    max_change = max_change.max(delta.abs());
                    // keep S and s in step with the changed cell
                    for c in 0..d {
                        let xc = x[r * d + c];
                        if c == j {
                            gram[(j, j)] += new * new - old * old;
                        } else {
                            gram[(j, c)] += delta * xc;
                            gram[(c, j)] += delta * xc;
                        }
                    }
                    sums[j] += delta;
                    x[r * d + j] = new;
                }
                models.push(model);
            }
            rounds.push(models);
            if max_change < cfg.tol {
                log::debug!("imputer converged after {} rounds", round + 1);
                break;
            }
        }
        Ok((IterativeImputer { cfg, means, rounds }, x))
    }

    pub fn config(&self) -> ImputeConfig {
        self.cfg
    }

    pub fn rounds_run(&self) -> usize {
        self.rounds.len()
    }

    /// Completes `m` with the fitted means and regressions; observed cells
    /// are copied through.
    pub fn transform(&self, m: &TableMatrix) -> Result<Vec<f64>> {
        let d = self.means.len();
        if m.cols != d {
            return Err(Error::shape("impute", format!("fitted on {d} columns, got {}", m.cols)));
        }
        let mut x: Vec<f64> = m.cells.iter().enumerate().map(|(i, c)| c.unwrap_or(self.means[i % d])).collect();
        for models in &self.rounds {
            for model in models {
                for r in 0..m.rows {
                    if m.get(r, model.target).is_none() {
                        x[r * d + model.target] = model.predict(&x[r * d..(r + 1) * d]);
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Fits and completes in one call.
pub fn iterative_impute(m: &TableMatrix, cfg: ImputeConfig) -> Result<Vec<f64>> {
    IterativeImputer::fit(m, cfg).map(|(_, x)| x)
}
