//! Adaptive mixed smooth loss: Gaussian and Laplacian smoothness penalties,
//! distance weighting from the observation mask, and linear weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{param_err, Result};
use crate::grid::ObservationMask;

pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianForm {
    /// `exp(-(h / 2σ)²)`
    #[default]
    Literal,
    /// `exp(-h² / 2σ²)`
    Standard,
}

/// Normalised separable `k×k` Gaussian kernel, row-major.
pub fn gaussian_kernel(k: usize, sigma: f64, form: GaussianForm) -> Result<Vec<f64>> {
    if k.is_multiple_of(2) {
        return param_err(format!("gaussian kernel length must be odd, got {k}"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return param_err(format!("gaussian sigma must be positive, got {sigma}"));
    }
    let r = (k / 2) as f64;
    let g: Vec<f64> = (0..k)
        .map(|i| {
            let h = i as f64 - r;
            match form {
                GaussianForm::Literal => (-(h / (2.0 * sigma)).powi(2)).exp(),
                GaussianForm::Standard => (-(h * h) / (2.0 * sigma * sigma)).exp(),
            }
        })
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    Ok(g.iter()
        .flat_map(|a| g.iter().map(move |b| a * b))
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct SmoothTerms {
    pub l_g: Var,
    pub l_l: Var,
    pub smooth: Var,
}

fn fixed_conv(tape: &mut Tape, x: Var, kernel: &[f64], k: usize) -> Result<Var> {
    let w = tape.leaf(Tensor::new(vec![1, 1, k, k], kernel.to_vec())?, false)?;
    let b = tape.leaf(Tensor::zeros(vec![1]), false)?;
    tape.conv2d(x, w, b)
}

/// `L_G = mean((f − G*f)²)`, `L_L = mean((K_L*f)²)`, `L_G + λ_L·L_L`,
/// all with zero padding.
pub fn smoothness_loss(
    tape: &mut Tape,
    pred: Var,
    kernel: &[f64],
    lambda_l: f64,
) -> Result<SmoothTerms> {
    let k = (kernel.len() as f64).sqrt().round() as usize;
    if k * k != kernel.len() {
        return param_err(format!(
            "smoothing kernel of {} entries is not square",
            kernel.len()
        ));
    }
    let smoothed = fixed_conv(tape, pred, kernel, k)?;
    let diff = tape.sub(pred, smoothed)?;
    let l_g = tape.mean_square(diff)?;
    let lap = fixed_conv(tape, pred, &LAPLACIAN, 3)?;
    let l_l = tape.mean_square(lap)?;
    let scaled = tape.scale(l_l, lambda_l)?;
    let smooth = tape.add(l_g, scaled)?;
    Ok(SmoothTerms { l_g, l_l, smooth })
}

/// Box blur of the unobserved indicator, clamped to `[0, 1]`, and its mean.
pub fn distance_weight(mask: &ObservationMask, blur_k: usize) -> Result<(Vec<f64>, f64)> {
    if blur_k.is_multiple_of(2) {
        return param_err(format!("blur size must be odd, got {blur_k}"));
    }
    let (h, w) = mask.dims();
    let u: Vec<f64> = mask.as_f64().iter().map(|m| 1.0 - m).collect();
    let r = (blur_k / 2) as isize;
    let area = (blur_k * blur_k) as f64;
    let mut d = vec![0.0; h * w];
    for row in 0..h as isize {
        for col in 0..w as isize {
            let mut s = 0.0;
            for dr in -r..=r {
                for dc in -r..=r {
                    let (rr, cc) = (row + dr, col + dc);
                    if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                        s += u[rr as usize * w + cc as usize];
                    }
                }
            }
            d[row as usize * w + col as usize] = (s / area).clamp(0.0, 1.0);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok((d, mean))
}

/// `ω₀ (1 − min(1, t/T))`.
pub fn weight_decay(omega0: f64, t: usize, total: usize) -> f64 {
    let frac = if total == 0 {
        1.0
    } else {
        (t as f64 / total as f64).min(1.0)
    };
    omega0 * (1.0 - frac)
}
