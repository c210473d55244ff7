//! Covariance functions and covariance-matrix assembly.
//!
//! Distances are measured in cell units; range parameters given as a fraction
//! of the grid side are converted with [`phi_from_fraction`].

pub mod bessel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::grid::Cell;
use crate::linalg::{Cholesky, SquareMatrix};

pub use bessel::bessel_k;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryParams {
    pub sigma2: f64,
    pub phi: f64,
    #[serde(default)]
    pub tau2: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    0.5
}

impl StationaryParams {
    pub fn new(sigma2: f64, phi: f64) -> Self {
        StationaryParams {
            sigma2,
            phi,
            tau2: 0.0,
            nu: 0.5,
        }
    }

    pub fn with_nugget(mut self, tau2: f64) -> Self {
        self.tau2 = tau2;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return param_err(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !(self.phi > 0.0) {
            return param_err(format!("phi must be positive, got {}", self.phi));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return param_err(format!("tau2 must be non-negative, got {}", self.tau2));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return param_err(format!("nu must be positive, got {}", self.nu));
        }
        Ok(())
    }

    fn without_nugget(self) -> Self {
        StationaryParams { tau2: 0.0, ..self }
    }
}

/// Range in cell units for a range given as a fraction of the grid side.
pub fn phi_from_fraction(fraction: f64, height: usize, width: usize) -> f64 {
    fraction * height.max(width) as f64
}

fn check_lag(h: f64) -> Result<()> {
    if !(h >= 0.0) {
        return param_err(format!("lag must be non-negative, got {h}"));
    }
    Ok(())
}

fn nugget_at(h: f64, tau2: f64) -> f64 {
    if h == 0.0 {
        tau2
    } else {
        0.0
    }
}

fn exponential(h: f64, p: &StationaryParams) -> f64 {
    p.sigma2 * (-h / p.phi).exp() + nugget_at(h, p.tau2)
}

fn wave(h: f64, p: &StationaryParams) -> f64 {
    if h == 0.0 {
        return p.sigma2 + p.tau2;
    }
    let x = h / p.phi;
    p.sigma2 * x.sin() / x
}

/// `σ² exp(-h/φ)`, plus `τ²` at zero lag.
pub fn cov_exponential(h: f64, p: &StationaryParams) -> Result<f64> {
    check_lag(h)?;
    p.validate()?;
    Ok(exponential(h, p))
}

/// `σ² (φ/h) sin(h/φ)`, with the `sinc` limit `σ²` at zero lag (plus `τ²`).
pub fn cov_wave(h: f64, p: &StationaryParams) -> Result<f64> {
    check_lag(h)?;
    p.validate()?;
    Ok(wave(h, p))
}

/// Pointwise product of an exponential and a wave covariance.
pub fn cov_product_exp_wave(
    h: f64,
    p_exp: &StationaryParams,
    p_wave: &StationaryParams,
) -> Result<f64> {
    Ok(cov_exponential(h, p_exp)? * cov_wave(h, p_wave)?)
}

fn matern_unchecked(h: f64, nu: f64, phi: f64) -> f64 {
    let x = h / phi;
    if x == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        (-x).exp()
    } else if nu == 1.5 {
        (1.0 + x) * (-x).exp()
    } else if nu == 2.5 {
        (1.0 + x + x * x / 3.0) * (-x).exp()
    } else {
        let k = bessel_k(nu, x);
        if k == 0.0 {
            return 0.0;
        }
        // 2^{1-ν}/Γ(ν) · x^ν K_ν(x), in logs to avoid overflow of x^ν / Γ(ν)
        let log = (1.0 - nu) * std::f64::consts::LN_2 - libm::lgamma(nu) + nu * x.ln() + k.ln();
        log.exp().min(1.0)
    }
}

/// Matérn correlation `(1/(2^{ν-1}Γ(ν))) (h/φ)^ν K_ν(h/φ)`, equal to 1 at
/// zero lag.
pub fn matern_correlation(h: f64, nu: f64, phi: f64) -> Result<f64> {
    check_lag(h)?;
    if !(nu > 0.0 && nu.is_finite()) || !(phi > 0.0) {
        return param_err(format!(
            "matern needs nu > 0 and phi > 0, got nu={nu}, phi={phi}"
        ));
    }
    Ok(matern_unchecked(h, nu, phi))
}

/// Local geometric anisotropy: ranges along the major and minor axes and the
/// rotation of the major axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalAnisotropy {
    pub range_major: f64,
    pub range_minor: f64,
    pub tilt: f64,
}

type Mat2 = [[f64; 2]; 2];

fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

impl LocalAnisotropy {
    pub fn isotropic(range: f64) -> Self {
        LocalAnisotropy {
            range_major: range,
            range_minor: range,
            tilt: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_minor > 0.0)
            || !(self.range_major >= self.range_minor)
            || !self.range_major.is_finite()
        {
            return param_err(format!(
                "anisotropy needs range_major >= range_minor > 0, got {} / {}",
                self.range_major, self.range_minor
            ));
        }
        if !self.tilt.is_finite() {
            return param_err("tilt must be finite");
        }
        Ok(())
    }

    /// Kernel matrix `R diag(a², b²) Rᵀ`.
    pub fn matrix(&self) -> Mat2 {
        let (s, c) = self.tilt.sin_cos();
        let a = self.range_major * self.range_major;
        let b = self.range_minor * self.range_minor;
        [
            [c * c * a + s * s * b, c * s * (a - b)],
            [c * s * (a - b), s * s * a + c * c * b],
        ]
    }
}

fn averaged(ai: &LocalAnisotropy, aj: &LocalAnisotropy) -> Mat2 {
    let (mi, mj) = (ai.matrix(), aj.matrix());
    [
        [(mi[0][0] + mj[0][0]) / 2.0, (mi[0][1] + mj[0][1]) / 2.0],
        [(mi[1][0] + mj[1][0]) / 2.0, (mi[1][1] + mj[1][1]) / 2.0],
    ]
}

fn quad_form(d: [f64; 2], m: &Mat2) -> Result<f64> {
    let det = det2(m);
    let tr = m[0][0] + m[1][1];
    // eigenvalues of a symmetric 2x2
    let disc = ((m[0][0] - m[1][1]).powi(2) / 4.0 + m[0][1] * m[0][1]).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if !(det > 0.0) || !(lmin > lmax * 1e-14) {
        return Err(Error::Numerical(format!(
            "averaged kernel matrix is singular (determinant {det:e}, condition number {:e})",
            lmax / lmin.abs()
        )));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let q =
        d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    Ok(q.max(0.0))
}

/// Quadratic-form distance `(sᵢ-sⱼ)ᵀ ((Σᵢ+Σⱼ)/2)⁻¹ (sᵢ-sⱼ)`.
pub fn q_distance(
    si: [f64; 2],
    sj: [f64; 2],
    ai: &LocalAnisotropy,
    aj: &LocalAnisotropy,
) -> Result<f64> {
    quad_form([si[0] - sj[0], si[1] - sj[1]], &averaged(ai, aj))
}

/// Per-cell parameters of a non-stationary Matérn field.
#[derive(Debug, Clone, PartialEq)]
pub struct NonstationaryField {
    pub height: usize,
    pub width: usize,
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
    pub anisotropy: Vec<LocalAnisotropy>,
    pub mean: Vec<f64>,
    pub nugget: f64,
}

impl NonstationaryField {
    pub fn constant(
        height: usize,
        width: usize,
        sigma: f64,
        nu: f64,
        anis: LocalAnisotropy,
    ) -> Self {
        let n = height * width;
        NonstationaryField {
            height,
            width,
            sigma: vec![sigma; n],
            nu: vec![nu; n],
            anisotropy: vec![anis; n],
            mean: vec![0.0; n],
            nugget: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0 {
            return param_err("non-stationary field has no cells");
        }
        for (name, len) in [
            ("sigma", self.sigma.len()),
            ("nu", self.nu.len()),
            ("anisotropy", self.anisotropy.len()),
            ("mean", self.mean.len()),
        ] {
            if len != n {
                return Err(Error::Shape(format!(
                    "{name} field has {len} cells, expected {n}"
                )));
            }
        }
        if self.sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return param_err("every local sigma must be positive");
        }
        if self.nu.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return param_err("every local nu must be positive");
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return param_err("mean field must be finite");
        }
        if !(self.nugget >= 0.0) {
            return param_err("nugget must be non-negative");
        }
        self.anisotropy
            .iter()
            .try_for_each(LocalAnisotropy::validate)
    }

    fn idx(&self, c: Cell) -> Result<usize> {
        if c.row >= self.height || c.col >= self.width {
            return param_err(format!(
                "cell ({}, {}) outside the {}x{} parameter grid",
                c.row, c.col, self.height, self.width
            ));
        }
        Ok(c.row * self.width + c.col)
    }
}

fn cov_ns_signal(si: Cell, sj: Cell, f: &NonstationaryField) -> Result<f64> {
    let (i, j) = (f.idx(si)?, f.idx(sj)?);
    let (ai, aj) = (&f.anisotropy[i], &f.anisotropy[j]);
    let avg = averaged(ai, aj);
    let pi = si.coords();
    let pj = sj.coords();
    let q = quad_form([pi[0] - pj[0], pi[1] - pj[1]], &avg)?;
    let det_i = det2(&ai.matrix());
    let det_j = det2(&aj.matrix());
    let prefactor =
        f.sigma[i] * f.sigma[j] * det_i.powf(0.25) * det_j.powf(0.25) / det2(&avg).sqrt();
    let nu = (f.nu[i] + f.nu[j]).sqrt();
    Ok(prefactor * matern_unchecked(q.sqrt(), nu, 1.0))
}

/// Non-stationary Matérn covariance between two cells, with smoothness
/// `√(νᵢ+νⱼ)` and unit scale applied to `√Q`.
pub fn cov_nonstationary(si: Cell, sj: Cell, field: &NonstationaryField) -> Result<f64> {
    let c = cov_ns_signal(si, sj, field)?;
    Ok(if si == sj { c + field.nugget } else { c })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    Exponential(StationaryParams),
    ExponentialNugget(StationaryParams),
    Matern(StationaryParams),
    Wave(StationaryParams),
    ProductExpWave {
        exp: StationaryParams,
        wave: StationaryParams,
    },
    NonstationaryMatern(Arc<NonstationaryField>),
}

fn dist(a: Cell, b: Cell) -> f64 {
    let dr = a.row as f64 - b.row as f64;
    let dc = a.col as f64 - b.col as f64;
    (dr * dr + dc * dc).sqrt()
}

impl CovarianceModel {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceModel::Exponential(_) => "exponential",
            CovarianceModel::ExponentialNugget(_) => "exponential_nugget",
            CovarianceModel::Matern(_) => "matern",
            CovarianceModel::Wave(_) => "wave",
            CovarianceModel::ProductExpWave { .. } => "exponential_x_wave",
            CovarianceModel::NonstationaryMatern(_) => "nonstationary_matern",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceModel::Exponential(p)
            | CovarianceModel::ExponentialNugget(p)
            | CovarianceModel::Matern(p)
            | CovarianceModel::Wave(p) => p.validate(),
            CovarianceModel::ProductExpWave { exp, wave } => {
                exp.validate()?;
                wave.validate()
            }
            CovarianceModel::NonstationaryMatern(f) => f.validate(),
        }
    }

    /// Scale used for diagonal jitter: the (largest) marginal variance.
    pub fn variance_scale(&self) -> f64 {
        match self {
            CovarianceModel::Exponential(p)
            | CovarianceModel::ExponentialNugget(p)
            | CovarianceModel::Matern(p)
            | CovarianceModel::Wave(p) => p.sigma2,
            CovarianceModel::ProductExpWave { exp, wave } => exp.sigma2 * wave.sigma2,
            CovarianceModel::NonstationaryMatern(f) => {
                f.sigma.iter().fold(0.0f64, |m, s| m.max(s * s))
            }
        }
    }

    /// Covariance between two cells, including any nugget at zero lag.
    pub fn cov(&self, a: Cell, b: Cell) -> Result<f64> {
        let h = dist(a, b);
        Ok(match self {
            CovarianceModel::Exponential(p) | CovarianceModel::ExponentialNugget(p) => {
                exponential(h, p)
            }
            CovarianceModel::Matern(p) => {
                p.sigma2 * matern_unchecked(h, p.nu, p.phi) + nugget_at(h, p.tau2)
            }
            CovarianceModel::Wave(p) => wave(h, p),
            CovarianceModel::ProductExpWave { exp, wave: w } => exponential(h, exp) * wave(h, w),
            CovarianceModel::NonstationaryMatern(f) => cov_nonstationary(a, b, f)?,
        })
    }

    /// Covariance of the latent signal: the same model with the nugget
    /// removed. Used for prediction targets.
    pub fn signal_cov(&self, a: Cell, b: Cell) -> Result<f64> {
        let h = dist(a, b);
        Ok(match self {
            CovarianceModel::Exponential(p) | CovarianceModel::ExponentialNugget(p) => {
                exponential(h, &p.without_nugget())
            }
            CovarianceModel::Matern(p) => p.sigma2 * matern_unchecked(h, p.nu, p.phi),
            CovarianceModel::Wave(p) => wave(h, &p.without_nugget()),
            CovarianceModel::ProductExpWave { exp, wave: w } => {
                exponential(h, &exp.without_nugget()) * wave(h, &w.without_nugget())
            }
            CovarianceModel::NonstationaryMatern(f) => cov_ns_signal(a, b, f)?,
        })
    }
}

/// Dense symmetric covariance matrix over `cells`.
pub fn build_cov_matrix(cells: &[Cell], model: &CovarianceModel) -> Result<SquareMatrix> {
    if cells.is_empty() {
        return param_err("covariance matrix needs at least one location");
    }
    model.validate()?;
    let n = cells.len();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = model.cov(cells[i], cells[j])?;
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Ok(m)
}

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FactoredCov {
    pub chol: Cholesky,
    /// Diagonal jitter added before the factorisation succeeded (0 if none).
    pub jitter: f64,
}

/// Cholesky factorisation with geometric jitter escalation
/// `1e-10·σ², 1e-9·σ², …, 1e-6·σ²`, tried only after a plain factorisation
/// fails.
pub fn factor_matrix(mut m: SquareMatrix, model: &CovarianceModel) -> Result<FactoredCov> {
    if let Some(chol) = Cholesky::factor(&m) {
        return Ok(FactoredCov { chol, jitter: 0.0 });
    }
    let scale = model.variance_scale();
    let mut rel = JITTER_START;
    let mut applied = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let eps = rel * scale;
        m.add_diagonal(eps - applied);
        applied = eps;
        if let Some(chol) = Cholesky::factor(&m) {
            return Ok(FactoredCov { chol, jitter: eps });
        }
        rel *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        model: model.name().to_string(),
        jitter: applied,
    })
}

pub fn factor_cov(cells: &[Cell], model: &CovarianceModel) -> Result<FactoredCov> {
    factor_matrix(build_cov_matrix(cells, model)?, model)
}
