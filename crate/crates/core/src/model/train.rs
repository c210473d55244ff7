//! Single-field training: the network is fitted to the observations of one
//! grid and its output is the interpolated field.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loss::{distance_weight, gaussian_kernel, smoothness_loss, weight_decay, GaussianForm};
use super::unet::{build_unet, UNet, UNetConfig};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{param_err, Error, Result};
use crate::grid::{GridField, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "T", alias = "iterations")]
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub omega0: f64,
    pub lambda_l: f64,
    pub gauss_sigma: f64,
    pub gauss_k: usize,
    pub gauss_form: GaussianForm,
    pub blur_k: usize,
    /// Weight initialisation seed; derived from the run seed, never read from config.
    #[serde(skip)]
    pub seed: u64,
    /// Fit standardised observations and map the output back.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            omega0: 1.0,
            lambda_l: 0.1,
            gauss_sigma: 1.0,
            gauss_k: 5,
            gauss_form: GaussianForm::Literal,
            blur_k: 7,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    /// Plain masked-MSE training.
    pub fn ml_base() -> Self {
        TrainConfig {
            omega0: 0.0,
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return param_err("T must be at least 1");
        }
        if !(self.omega0 >= 0.0 && self.lambda_l >= 0.0) {
            return param_err("omega0 and lambda_l must be nonnegative");
        }
        if self.gauss_k.is_multiple_of(2) || self.blur_k.is_multiple_of(2) {
            return param_err("gauss_k and blur_k must be odd");
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub masked: f64,
    pub l_g: f64,
    pub l_l: f64,
    pub omega: f64,
    pub d_bar: f64,
    pub total: f64,
}

impl LossRecord {
    /// `masked + ω·D̄·(L_G + λ_L·L_L)` from the logged parts.
    pub fn recombine(&self, lambda_l: f64) -> f64 {
        self.masked + self.omega * self.d_bar * (self.l_g + lambda_l * self.l_l)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    /// Network output with observed cells replaced by the observations.
    pub prediction: GridField,
    /// Network output as is.
    pub raw: GridField,
    /// Smoothness weight at `t = T`.
    pub omega_at_end: f64,
    pub wall_time_s: f64,
}

/// Network input for one field: the value channel (zero where unobserved),
/// followed by the mask channel when the network takes two inputs.
fn network_input(
    values: &[f64],
    mask: &[f64],
    cfg: &UNetConfig,
    h: usize,
    w: usize,
) -> Result<Tensor> {
    let masked: Vec<f64> = values.iter().zip(mask).map(|(v, m)| v * m).collect();
    match (cfg.partial_conv, cfg.in_channels) {
        (true, 1) => Tensor::new(vec![1, h, w], masked),
        (false, 2) => {
            let mut data = masked;
            data.extend_from_slice(mask);
            Tensor::new(vec![2, h, w], data)
        }
        (p, c) => param_err(format!(
            "{} networks take {} input channels, configured with {c}",
            if p { "partial-convolution" } else { "standard" },
            if p { 1 } else { 2 }
        )),
    }
}

pub fn train_single_field(
    field: &GridField,
    mask: &ObservationMask,
    unet: &UNetConfig,
    train: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    train.validate()?;
    field.check_same_dims(mask.dims(), "field vs mask")?;
    let (h, w) = field.dims();
    let observed = mask.observed_indices();
    if observed.is_empty() {
        return Err(Error::InsufficientData(
            "training needs at least one observed cell".into(),
        ));
    }
    let (shift, scale) = if train.standardize {
        let n = observed.len() as f64;
        let mean = observed.iter().map(|&i| field.values()[i]).sum::<f64>() / n;
        let var = observed
            .iter()
            .map(|&i| (field.values()[i] - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let target: Vec<f64> = field.values().iter().map(|v| (v - shift) / scale).collect();
    let m = mask.as_f64();
    let input = network_input(&target, &m, unet, h, w)?;
    let mask_t = Tensor::new(
        vec![1, h, w],
        if unet.partial_conv {
            m.clone()
        } else {
            vec![1.0; h * w]
        },
    )?;
    let kernel = gaussian_kernel(train.gauss_k, train.gauss_sigma, train.gauss_form)?;
    let (_, d_bar) = distance_weight(mask, train.blur_k)?;

    let mut net = build_unet(unet, train.seed)?;
    let adam = train.adam();
    let mut state = AdamState::new(&net.parameter_sizes());
    let mut records = Vec::with_capacity(train.iterations);
    let diverged = |iteration: usize, e: Error| match e {
        Error::Numerical(_) => Error::Divergence {
            iteration,
            value: f64::NAN,
        },
        e => e,
    };
    for t in 0..train.iterations {
        let omega = weight_decay(train.omega0, t, train.iterations);
        let mut tape = Tape::new();
        let params = net.leaves(&mut tape, true).map_err(|e| diverged(t, e))?;
        let step = (|| -> Result<_> {
            let pred = net.forward(&mut tape, &params, &input, &mask_t)?;
            let masked = tape.masked_mse(pred, &target, &m)?;
            let terms = smoothness_loss(&mut tape, pred, &kernel, train.lambda_l)?;
            let weighted = tape.scale(terms.smooth, omega * d_bar)?;
            let total = tape.add(masked, weighted)?;
            Ok((masked, terms, total))
        })();
        let (masked, terms, total) = step.map_err(|e| diverged(t, e))?;
        let value = |v| tape.value(v).data[0];
        let rec = LossRecord {
            iteration: t,
            masked: value(masked),
            l_g: value(terms.l_g),
            l_l: value(terms.l_l),
            omega,
            d_bar,
            total: value(total),
        };
        if !rec.total.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                value: rec.total,
            });
        }
        records.push(rec);
        tape.backward(total)?;
        let grads: Vec<Vec<f64>> = params
            .iter()
            .flat_map(|&(wv, bv)| [wv, bv])
            .map(|v| {
                tape.take_grad(v)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
            })
            .collect();
        let mut bufs: Vec<Vec<f64>> = net.buffers_mut().into_iter().map(std::mem::take).collect();
        adam_step(&mut bufs, &grads, &mut state, &adam)?;
        restore(&mut net, bufs);
    }

    let out = net
        .predict(&input, &mask_t)
        .map_err(|e| diverged(train.iterations, e))?;
    let raw: Vec<f64> = out.data.iter().map(|v| v * scale + shift).collect();
    let raw = GridField::new(h, w, raw)?;
    let prediction = raw.overwrite_observed(field, mask)?;
    Ok(TrainReport {
        records,
        prediction,
        raw,
        omega_at_end: weight_decay(train.omega0, train.iterations, train.iterations),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn restore(net: &mut UNet, bufs: Vec<Vec<f64>>) {
    for (dst, src) in net.buffers_mut().into_iter().zip(bufs) {
        *dst = src;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample_mask;

    fn small() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_channels: 4,
            ..UNetConfig::ml_vsl()
        }
    }

    fn field(h: usize, w: usize) -> GridField {
        GridField::new(h, w, (0..h * w).map(|i| ((i as f64) * 0.3).sin()).collect()).unwrap()
    }

    #[test]
    fn one_iteration_one_record() {
        let f = field(8, 8);
        let m = sample_mask(8, 8, 0.5, 1).unwrap();
        let r = train_single_field(
            &f,
            &m,
            &small(),
            &TrainConfig {
                iterations: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].omega, 1.0);
        assert_eq!(r.omega_at_end, 0.0);
    }

    #[test]
    fn ledger_identity_and_overwrite() {
        let f = field(8, 8);
        let m = sample_mask(8, 8, 0.4, 2).unwrap();
        let cfg = TrainConfig {
            iterations: 5,
            ..TrainConfig::default()
        };
        let r = train_single_field(&f, &m, &small(), &cfg).unwrap();
        for rec in &r.records {
            assert!((rec.total - rec.recombine(cfg.lambda_l)).abs() <= 1e-10);
        }
        for i in m.observed_indices() {
            assert_eq!(r.prediction.values()[i], f.values()[i]);
        }
    }

    #[test]
    fn omega_zero_switches_off_smoothing() {
        let f = field(8, 8);
        let m = sample_mask(8, 8, 0.4, 2).unwrap();
        let r = train_single_field(
            &f,
            &m,
            &small(),
            &TrainConfig {
                iterations: 3,
                omega0: 0.0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(r.records.iter().all(|rec| rec.total == rec.masked));
    }

    #[test]
    fn deterministic() {
        let f = field(8, 8);
        let m = sample_mask(8, 8, 0.5, 3).unwrap();
        let cfg = TrainConfig {
            iterations: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_single_field(&f, &m, &small(), &cfg).unwrap();
        let b = train_single_field(&f, &m, &small(), &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.prediction, b.prediction);
    }

    #[test]
    fn base_network_takes_two_channels() {
        let f = field(8, 8);
        let m = sample_mask(8, 8, 0.5, 3).unwrap();
        let base = UNetConfig {
            depth: 2,
            base_channels: 4,
            ..UNetConfig::ml_base()
        };
        assert!(train_single_field(
            &f,
            &m,
            &base,
            &TrainConfig {
                iterations: 2,
                ..TrainConfig::ml_base()
            }
        )
        .is_ok());
        let bad = UNetConfig {
            in_channels: 1,
            ..base
        };
        assert!(train_single_field(
            &f,
            &m,
            &bad,
            &TrainConfig {
                iterations: 1,
                ..TrainConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let f = field(4, 4);
        let m = ObservationMask::empty(4, 4).unwrap();
        let r = train_single_field(
            &f,
            &m,
            &small(),
            &TrainConfig {
                iterations: 1,
                ..TrainConfig::default()
            },
        );
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn huge_learning_rate_diverges_with_iteration() {
        let f = GridField::new(8, 8, (0..64).map(|i| 1e150 * (i as f64)).collect()).unwrap();
        let m = sample_mask(8, 8, 0.5, 3).unwrap();
        let cfg = TrainConfig {
            iterations: 50,
            learning_rate: 1e300,
            standardize: false,
            ..TrainConfig::default()
        };
        let r = train_single_field(&f, &m, &small(), &cfg);
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }
}
