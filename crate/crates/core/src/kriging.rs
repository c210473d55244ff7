//! Ordinary kriging with a known covariance model.
//!
//! The bordered system `[C 1; 1ᵀ 0] [λ; μ] = [c₀; 1]` is solved through the
//! Cholesky factor of `C` alone: with `v = C⁻¹1` and `w = C⁻¹c₀`,
//! `μ = (1ᵀw − 1) / 1ᵀv` and `λ = w − μ v`. The factor is computed once and
//! reused for every target.
//!
//! Prediction targets use the nugget-free (signal) covariance, so with a
//! nugget the predictor filters measurement noise instead of reproducing the
//! observations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_cov_matrix, factor_matrix, CovarianceModel, FactoredCov};
use crate::error::{Error, Result};
use crate::grid::{Cell, GridField, ObservationMask};
use crate::linalg::SquareMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrigingOptions {
    /// Above this many observations each target uses a local neighbourhood.
    pub local_threshold: usize,
    /// Neighbourhood size in local mode.
    pub neighbors: usize,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        KrigingOptions {
            local_threshold: 4096,
            neighbors: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrigingPrediction {
    pub field: GridField,
    /// `max |Σλ − 1|` over all predicted cells.
    pub weights_sum_check: f64,
    /// Largest diagonal jitter any factorisation needed.
    pub jitter: f64,
}

/// A factored ordinary-kriging system over a fixed set of observations.
#[derive(Debug, Clone)]
pub struct KrigingSystem {
    pub obs_cells: Vec<Cell>,
    pub obs_values: Vec<f64>,
    pub cov: CovarianceModel,
    factored: FactoredCov,
    inv_ones: Vec<f64>,
    ones_inv_ones: f64,
}

impl KrigingSystem {
    pub fn new(obs_cells: Vec<Cell>, obs_values: Vec<f64>, cov: CovarianceModel) -> Result<Self> {
        if obs_cells.len() != obs_values.len() {
            return Err(Error::Shape(format!(
                "{} observation cells vs {} values",
                obs_cells.len(),
                obs_values.len()
            )));
        }
        if obs_cells.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "ordinary kriging needs at least 2 observations, got {}",
                obs_cells.len()
            )));
        }
        let c = build_cov_matrix(&obs_cells, &cov)?;
        let factored = factor_matrix(c, &cov)?;
        let inv_ones = factored.chol.solve(&vec![1.0; obs_cells.len()]);
        let ones_inv_ones: f64 = inv_ones.iter().sum();
        if !(ones_inv_ones.is_finite() && ones_inv_ones > 0.0) {
            return Err(Error::Numerical(format!(
                "degenerate kriging system (1ᵀC⁻¹1 = {ones_inv_ones})"
            )));
        }
        Ok(KrigingSystem {
            obs_cells,
            obs_values,
            cov,
            factored,
            inv_ones,
            ones_inv_ones,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.factored.jitter
    }

    /// The `(n+1)×(n+1)` bordered matrix, for inspection.
    pub fn augmented_matrix(&self) -> Result<SquareMatrix> {
        let n = self.obs_cells.len();
        let c = build_cov_matrix(&self.obs_cells, &self.cov)?;
        let mut a = SquareMatrix::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, c.get(i, j));
            }
            a.set(i, n, 1.0);
            a.set(n, i, 1.0);
        }
        Ok(a)
    }

    /// Kriging weights `λ` for one target.
    pub fn weights(&self, target: Cell) -> Result<Vec<f64>> {
        let c0 = self
            .obs_cells
            .iter()
            .map(|&c| self.cov.signal_cov(c, target))
            .collect::<Result<Vec<_>>>()?;
        let w = self.factored.chol.solve(&c0);
        let mu = (w.iter().sum::<f64>() - 1.0) / self.ones_inv_ones;
        Ok(w.iter()
            .zip(&self.inv_ones)
            .map(|(wi, vi)| wi - mu * vi)
            .collect())
    }

    /// Prediction and weight sum at `target`.
    pub fn predict(&self, target: Cell) -> Result<(f64, f64)> {
        let lambda = self.weights(target)?;
        let z = lambda
            .iter()
            .zip(&self.obs_values)
            .map(|(l, v)| l * v)
            .sum();
        Ok((z, lambda.iter().sum()))
    }
}

/// Ordinary kriging of every cell of the grid from the cells marked in `mask`.
pub fn ok_predict(
    field: &GridField,
    mask: &ObservationMask,
    cov: &CovarianceModel,
) -> Result<KrigingPrediction> {
    ok_predict_with(field, mask, cov, &KrigingOptions::default())
}

pub fn ok_predict_with(
    field: &GridField,
    mask: &ObservationMask,
    cov: &CovarianceModel,
    opts: &KrigingOptions,
) -> Result<KrigingPrediction> {
    field.check_same_dims(mask.dims(), "field vs mask")?;
    let obs: Vec<(Cell, f64)> = mask
        .observed_indices()
        .into_iter()
        .map(|i| (field.cell(i), field.values()[i]))
        .collect();
    ok_predict_points(&obs, field.height(), field.width(), cov, opts)
}

/// Kriging from an explicit observation list onto an `h × w` grid.
pub fn ok_predict_points(
    obs: &[(Cell, f64)],
    height: usize,
    width: usize,
    cov: &CovarianceModel,
    opts: &KrigingOptions,
) -> Result<KrigingPrediction> {
    if obs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ordinary kriging needs at least 2 observations, got {}",
            obs.len()
        )));
    }
    if let Some((c, _)) = obs.iter().find(|(c, _)| c.row >= height || c.col >= width) {
        return Err(Error::Shape(format!(
            "observation at ({}, {}) outside {height}x{width} grid",
            c.row, c.col
        )));
    }
    let targets: Vec<Cell> = (0..height * width)
        .map(|i| Cell::new(i / width, i % width))
        .collect();
    let results: Vec<(f64, f64, f64)> = if obs.len() <= opts.local_threshold {
        let sys = KrigingSystem::new(
            obs.iter().map(|o| o.0).collect(),
            obs.iter().map(|o| o.1).collect(),
            cov.clone(),
        )?;
        let jitter = sys.jitter();
        targets
            .par_iter()
            .map(|&t| sys.predict(t).map(|(z, s)| (z, s, jitter)))
            .collect::<Result<_>>()?
    } else {
        let k = opts.neighbors.max(2).min(obs.len());
        targets
            .par_iter()
            .map(|&t| {
                let local = nearest(obs, t, k);
                let sys = KrigingSystem::new(
                    local.iter().map(|o| o.0).collect(),
                    local.iter().map(|o| o.1).collect(),
                    cov.clone(),
                )?;
                let (z, s) = sys.predict(t)?;
                Ok((z, s, sys.jitter()))
            })
            .collect::<Result<_>>()?
    };
    let mut check = 0.0f64;
    let mut jitter = 0.0f64;
    let mut values = Vec::with_capacity(results.len());
    for (z, s, j) in results {
        check = check.max((s - 1.0).abs());
        jitter = jitter.max(j);
        values.push(z);
    }
    Ok(KrigingPrediction {
        field: GridField::new(height, width, values)?,
        weights_sum_check: check,
        jitter,
    })
}

/// `k` observations closest to `target`, ties broken by cell order.
fn nearest(obs: &[(Cell, f64)], target: Cell, k: usize) -> Vec<(Cell, f64)> {
    let d2 = |c: Cell| {
        let dr = c.row as i64 - target.row as i64;
        let dc = c.col as i64 - target.col as i64;
        dr * dr + dc * dc
    };
    let mut ranked: Vec<(i64, Cell, f64)> = obs.iter().map(|&(c, v)| (d2(c), c, v)).collect();
    let key = |a: &(i64, Cell, f64)| (a.0, a.1);
    ranked.select_nth_unstable_by(k - 1, |a, b| key(a).cmp(&key(b)));
    ranked.truncate(k);
    ranked.sort_by_key(key);
    ranked.into_iter().map(|(_, c, v)| (c, v)).collect()
}
