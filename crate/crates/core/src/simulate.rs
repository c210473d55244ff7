//! Unconditional Gaussian random field simulation by dense Cholesky
//! factorisation, plus the smoothly varying parameter fields used by the
//! non-stationary benchmark.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::{
    factor_cov, CovarianceModel, LocalAnisotropy, NonstationaryField, StationaryParams,
};
use crate::error::{param_err, Error, Result};
use crate::grid::{Cell, GridField};
use crate::rng::{derive_seed, rng_from_seed, standard_normals};

/// Largest grid (in cells) simulated by dense factorisation.
pub const MAX_SIMULATION_CELLS: usize = 64 * 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Mean {
    Constant(f64),
    Field(GridField),
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub height: usize,
    pub width: usize,
    pub covariance: CovarianceModel,
    pub mean: Mean,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub field: GridField,
    /// Diagonal jitter that the factorisation needed (0 if none).
    pub jitter: f64,
}

pub fn all_cells(height: usize, width: usize) -> Vec<Cell> {
    (0..height * width)
        .map(|i| Cell::new(i / width, i % width))
        .collect()
}

/// One realisation `mean + L z`, `z ~ N(0, I)`.
pub fn sample_grf(spec: &SimulationSpec) -> Result<Simulation> {
    let (h, w) = (spec.height, spec.width);
    if h < 2 || w < 2 {
        return param_err(format!("simulation grid must be at least 2x2, got {h}x{w}"));
    }
    if h * w > MAX_SIMULATION_CELLS {
        return Err(Error::SizeLimit(format!(
            "dense simulation of a {h}x{w} grid ({} cells) exceeds the limit of {MAX_SIMULATION_CELLS} cells",
            h * w
        )));
    }
    let mean = match &spec.mean {
        Mean::Constant(m) => vec![*m; h * w],
        Mean::Field(f) => {
            f.check_same_dims((h, w), "mean field vs simulation grid")?;
            f.values().to_vec()
        }
    };
    let factored = factor_cov(&all_cells(h, w), &spec.covariance)?;
    let z = standard_normals(&mut rng_from_seed(spec.seed), h * w);
    let lz = factored.chol.mul_lower(&z);
    let values = lz.iter().zip(&mean).map(|(a, b)| a + b).collect();
    Ok(Simulation {
        field: GridField::new(h, w, values)?,
        jitter: factored.jitter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// Corner-anchored bilinear interpolation.
    #[default]
    Bilinear,
    /// Same corner anchors, with a half-cosine easing along each axis.
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFieldSpec {
    /// Local range along the major axis, cell units.
    pub phi_range: (f64, f64),
    /// minor / major range ratio.
    pub anis_ratio_range: (f64, f64),
    pub tilt_range: (f64, f64),
    pub mean_amplitude: f64,
    pub sigma: f64,
    pub nu: f64,
    pub ramp: RampKind,
}

impl ParamFieldSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64), name: &str| -> Result<()> {
            if !(a.is_finite() && b.is_finite()) || a > b {
                return param_err(format!(
                    "{name} range must satisfy min <= max, got ({a}, {b})"
                ));
            }
            Ok(())
        };
        ordered(self.phi_range, "phi")?;
        ordered(self.anis_ratio_range, "anisotropy ratio")?;
        ordered(self.tilt_range, "tilt")?;
        if !(self.phi_range.0 > 0.0) {
            return param_err("phi range must be positive");
        }
        if !(self.anis_ratio_range.0 > 0.0 && self.anis_ratio_range.1 <= 1.0) {
            return param_err("anisotropy ratio must lie in (0, 1]");
        }
        if !(self.sigma > 0.0 && self.nu > 0.0) || !self.mean_amplitude.is_finite() {
            return param_err("sigma and nu must be positive, mean amplitude finite");
        }
        Ok(())
    }
}

/// Bilinear blend of corner values `[c00, c01, c10, c11]` at `(u, v) ∈ [0,1]²`.
fn blend(c: [f64; 4], u: f64, v: f64) -> f64 {
    let top = c[0] + (c[1] - c[0]) * v;
    let bottom = c[2] + (c[3] - c[2]) * v;
    top + (bottom - top) * u
}

fn axis(i: usize, n: usize, ramp: RampKind) -> f64 {
    let t = if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    };
    match ramp {
        RampKind::Bilinear => t,
        RampKind::Sinusoidal => (1.0 - (PI * t).cos()) / 2.0,
    }
}

/// Smooth per-cell parameter fields:
/// tilt rises from `min` at the first cell to `max` at the last,
/// the range peaks at the two off-diagonal corners,
/// the anisotropy ratio falls from left to right,
/// and the mean tilts from `-A` to `A` across the anti-diagonal.
pub fn make_param_fields(
    spec: &ParamFieldSpec,
    height: usize,
    width: usize,
) -> Result<NonstationaryField> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return param_err("parameter grid must be non-empty");
    }
    let (pl, ph) = spec.phi_range;
    let (rl, rh) = spec.anis_ratio_range;
    let (tl, th) = spec.tilt_range;
    let a = spec.mean_amplitude;
    let mid = |l: f64, h: f64| (l + h) / 2.0;
    let mut field = NonstationaryField::constant(
        height,
        width,
        spec.sigma,
        spec.nu,
        LocalAnisotropy::isotropic(pl),
    );
    for r in 0..height {
        let u = axis(r, height, spec.ramp);
        for c in 0..width {
            let v = axis(c, width, spec.ramp);
            let i = r * width + c;
            let phi = blend([pl, ph, ph, pl], u, v);
            let ratio = blend([rh, rl, rh, rl], u, v);
            let tilt = blend([tl, mid(tl, th), mid(tl, th), th], u, v);
            field.anisotropy[i] = LocalAnisotropy {
                range_major: phi,
                range_minor: phi * ratio,
                tilt,
            };
            field.mean[i] = blend([0.0, -a, a, 0.0], u, v);
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeMode {
    /// Single field under the product covariance.
    #[default]
    Product,
    /// Exponential field on the left half, wave field on the right half.
    Join,
}

pub fn sample_composite(
    exp: StationaryParams,
    wave: StationaryParams,
    height: usize,
    width: usize,
    seed: u64,
    mode: CompositeMode,
) -> Result<Simulation> {
    match mode {
        CompositeMode::Product => sample_grf(&SimulationSpec {
            height,
            width,
            covariance: CovarianceModel::ProductExpWave { exp, wave },
            mean: Mean::Constant(0.0),
            seed,
        }),
        CompositeMode::Join => {
            let part = |cov, k| {
                sample_grf(&SimulationSpec {
                    height,
                    width,
                    covariance: cov,
                    mean: Mean::Constant(0.0),
                    seed: derive_seed(seed, &[k]),
                })
            };
            let left = part(CovarianceModel::Exponential(exp), 1)?;
            let right = part(CovarianceModel::Wave(wave), 2)?;
            let mut out = left.field.clone();
            for r in 0..height {
                for c in width / 2..width {
                    out.set(r, c, right.field.get(r, c));
                }
            }
            Ok(Simulation {
                field: out,
                jitter: left.jitter.max(right.jitter),
            })
        }
    }
}
