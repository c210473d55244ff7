//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng as _;
use vslab::autodiff::{Tape, Tensor, Var};
use vslab::rng::{rng_from_seed, Rng};
use vslab::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub const GRAD_OPS: [&str; 13] = [
    "conv",
    "pconv",
    "relu",
    "maxpool",
    "upsample",
    "subsample",
    "concat",
    "crop",
    "add",
    "sub",
    "scale",
    "mean_square",
    "masked_mse",
];

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn uniform(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn eval(inputs: &[Tensor], f: &Build<'_>) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| t.leaf(x.clone(), false).unwrap())
        .collect();
    let out = f(&mut t, &vars).unwrap();
    t.value(out).data[0]
}

/// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over every input entry.
pub fn grad_error(inputs: &[Tensor], f: &Build<'_>) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| t.leaf(x.clone(), true).unwrap())
        .collect();
    let out = f(&mut t, &vars).unwrap();
    t.backward(out).unwrap();
    let mut analytic = Vec::new();
    for (v, x) in vars.iter().zip(inputs) {
        match t.grad(*v) {
            Some(g) => analytic.extend_from_slice(g),
            None => analytic.extend(std::iter::repeat_n(0.0, x.len())),
        }
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data[j] -= FD_STEP;
            numeric.push((eval(&plus, f) - eval(&minus, f)) / (2.0 * FD_STEP));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
}

/// Reduces a tensor to a scalar against a fixed random target so every
/// output entry carries a distinct upstream gradient.
fn project(t: &mut Tape, y: Var, target: &[f64]) -> Result<Var> {
    let ones = vec![1.0; target.len()];
    t.masked_mse(y, target, &ones)
}

fn random_mask(rng: &mut Rng, shape: &[usize], p: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| f64::from(rng.random_bool(p))).collect(),
    )
    .unwrap()
}

/// Values on a shuffled lattice so no two entries tie within a step.
fn distinct(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Worst relative gradient error of `op` over `instances` random instances.
pub fn check_op(op: &str, instances: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let c = rng.random_range(1..=2);
        let o = rng.random_range(1..=2);
        let h = 2 * rng.random_range(2..=3);
        let w = 2 * rng.random_range(2..=3);
        let k = [1, 3, 5][inst % 3];
        let x = uniform(&mut rng, &[c, h, w]);
        let err = match op {
            "conv" | "pconv" => {
                let wt = uniform(&mut rng, &[o, c, k, k]);
                let b = uniform(&mut rng, &[o]);
                let target = uniform(&mut rng, &[o, h, w]).data;
                if op == "conv" {
                    grad_error(&[x, wt, b], &move |t, v| {
                        let y = t.conv2d(v[0], v[1], v[2])?;
                        project(t, y, &target)
                    })
                } else {
                    let mask = random_mask(&mut rng, &[1, h, w], 0.4);
                    grad_error(&[x, wt, b], &move |t, v| {
                        let (y, _) = t.pconv2d(v[0], &mask, v[1], v[2])?;
                        project(t, y, &target)
                    })
                }
            }
            "relu" => {
                let mut x = x;
                for a in &mut x.data {
                    if a.abs() < 0.05 {
                        *a += 0.1f64.copysign(*a);
                    }
                }
                let target = uniform(&mut rng, &[c, h, w]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.relu(v[0])?;
                    project(t, y, &target)
                })
            }
            "maxpool" => {
                let x = distinct(&mut rng, &[c, h, w]);
                let target = uniform(&mut rng, &[c, h / 2, w / 2]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.downsample2(v[0])?;
                    project(t, y, &target)
                })
            }
            "upsample" => {
                let target = uniform(&mut rng, &[c, 2 * h, 2 * w]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.upsample2(v[0])?;
                    project(t, y, &target)
                })
            }
            "subsample" => {
                let target = uniform(&mut rng, &[c, h / 2, w / 2]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.subsample2(v[0])?;
                    project(t, y, &target)
                })
            }
            "concat" => {
                let z = uniform(&mut rng, &[o, h, w]);
                let target = uniform(&mut rng, &[c + o, h, w]).data;
                grad_error(&[x, z], &move |t, v| {
                    let y = t.concat_channels(v[0], v[1])?;
                    project(t, y, &target)
                })
            }
            "crop" => {
                let (top, left) = (rng.random_range(0..2), rng.random_range(0..2));
                let (ch, cw) = (h - 2, w - 2);
                let target = uniform(&mut rng, &[c, ch, cw]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.crop(v[0], top, left, ch, cw)?;
                    project(t, y, &target)
                })
            }
            "add" | "sub" => {
                let z = uniform(&mut rng, &[c, h, w]);
                let target = uniform(&mut rng, &[c, h, w]).data;
                let add = op == "add";
                grad_error(&[x, z], &move |t, v| {
                    let y = if add {
                        t.add(v[0], v[1])?
                    } else {
                        t.sub(v[0], v[1])?
                    };
                    project(t, y, &target)
                })
            }
            "scale" => {
                let s = rng.random_range(-3.0..3.0);
                let target = uniform(&mut rng, &[c, h, w]).data;
                grad_error(&[x], &move |t, v| {
                    let y = t.scale(v[0], s)?;
                    project(t, y, &target)
                })
            }
            "mean_square" => grad_error(&[x], &|t, v| t.mean_square(v[0])),
            "masked_mse" => {
                let x = uniform(&mut rng, &[1, h, w]);
                let target = uniform(&mut rng, &[1, h, w]).data;
                let mut mask = random_mask(&mut rng, &[1, h, w], 0.5).data;
                mask[0] = 1.0;
                grad_error(&[x], &move |t, v| t.masked_mse(v[0], &target, &mask))
            }
            other => panic!("no gradient check for `{other}`"),
        };
        worst = worst.max(err);
    }
    worst
}

// ---- kriging oracle ----

use vslab::covariance::{CovarianceModel, StationaryParams};
use vslab::grid::{Cell, GridField, ObservationMask};
use vslab::kriging::{ok_predict, KrigingSystem};

/// Dense Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn exp_cov(a: Cell, b: Cell, sigma2: f64, phi: f64, tau2: f64) -> f64 {
    let h = ((a.row as f64 - b.row as f64).powi(2) + (a.col as f64 - b.col as f64).powi(2)).sqrt();
    sigma2 * (-h / phi).exp() + if h == 0.0 { tau2 } else { 0.0 }
}

/// Ordinary kriging by solving the bordered system directly.
pub fn ok_oracle(obs: &[(Cell, f64)], target: Cell, sigma2: f64, phi: f64, tau2: f64) -> f64 {
    let n = obs.len();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    let mut b = vec![0.0; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = exp_cov(obs[i].0, obs[j].0, sigma2, phi, tau2);
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        b[i] = exp_cov(obs[i].0, target, sigma2, phi, 0.0);
    }
    b[n] = 1.0;
    let sol = solve_dense(a, b);
    (0..n).map(|i| sol[i] * obs[i].1).sum()
}

pub struct KrigingCheck {
    /// `max |ẑ − z| / σ` over observed cells with no nugget.
    pub exactness: f64,
    /// `max |Σλ − 1|` over every target of every instance.
    pub weight_sum: f64,
    /// `max |ẑ − oracle|` on the 5×5 instances.
    pub oracle: f64,
}

pub fn kriging_check(instances: usize, seed: u64) -> KrigingCheck {
    let mut rng = rng_from_seed(seed);
    let mut out = KrigingCheck {
        exactness: 0.0,
        weight_sum: 0.0,
        oracle: 0.0,
    };
    for inst in 0..instances {
        let (h, w) = (5, 5);
        let sigma2 = rng.random_range(0.5..2.0);
        let phi = rng.random_range(0.5..3.0);
        let tau2 = if inst % 2 == 0 {
            0.0
        } else {
            rng.random_range(0.05..0.5)
        };
        let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let field = GridField::new(h, w, values).unwrap();
        let mut bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        bits[0] = true;
        bits[h * w - 1] = true;
        let mask = ObservationMask::new(h, w, bits).unwrap();
        let p = StationaryParams::new(sigma2, phi).with_nugget(tau2);
        let cov = if tau2 == 0.0 {
            CovarianceModel::Exponential(p)
        } else {
            CovarianceModel::ExponentialNugget(p)
        };
        let pred = ok_predict(&field, &mask, &cov).unwrap();
        out.weight_sum = out.weight_sum.max(pred.weights_sum_check);

        let obs: Vec<(Cell, f64)> = mask
            .observed_indices()
            .into_iter()
            .map(|i| (field.cell(i), field.values()[i]))
            .collect();
        let sys = KrigingSystem::new(
            obs.iter().map(|o| o.0).collect(),
            obs.iter().map(|o| o.1).collect(),
            cov.clone(),
        )
        .unwrap();
        for i in 0..h * w {
            let target = field.cell(i);
            let lambda: f64 = sys.weights(target).unwrap().iter().sum();
            out.weight_sum = out.weight_sum.max((lambda - 1.0).abs());
            let want = ok_oracle(&obs, target, sigma2, phi, tau2);
            out.oracle = out.oracle.max((pred.field.values()[i] - want).abs());
            if tau2 == 0.0 && mask.bits()[i] {
                let e = (pred.field.values()[i] - field.values()[i]).abs() / sigma2.sqrt();
                out.exactness = out.exactness.max(e);
            }
        }
    }
    out
}

// ---- Monte-Carlo covariance of simulated fields ----

use vslab::simulate::{sample_grf, Mean, SimulationSpec};

pub struct PairCheck {
    pub a: usize,
    pub b: usize,
    pub empirical: f64,
    pub model: f64,
    pub std_err: f64,
}

impl PairCheck {
    pub fn z(&self) -> f64 {
        (self.empirical - self.model).abs() / self.std_err
    }
}

/// Empirical covariance of `pairs` random cell pairs over `samples` draws of
/// an 8×8 Exponential field, with the standard error of each estimate.
pub fn grf_pairs(samples: usize, pairs: usize, seed: u64) -> Vec<PairCheck> {
    let (h, w) = (8, 8);
    let (sigma2, phi) = (1.3, 2.5);
    let cov = CovarianceModel::Exponential(StationaryParams::new(sigma2, phi));
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|s| {
            let spec = SimulationSpec {
                height: h,
                width: w,
                covariance: cov.clone(),
                mean: Mean::Constant(0.0),
                seed: vslab::rng::derive_seed(seed, &[s as u64]),
            };
            sample_grf(&spec).unwrap().field.values().to_vec()
        })
        .collect();
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    (0..pairs)
        .map(|_| {
            let a = rng.random_range(0..h * w);
            let b = rng.random_range(0..h * w);
            let prods: Vec<f64> = draws.iter().map(|d| d[a] * d[b]).collect();
            let n = prods.len() as f64;
            let mean = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let (ca, cb) = (Cell::new(a / w, a % w), Cell::new(b / w, b % w));
            PairCheck {
                a,
                b,
                empirical: mean,
                model: exp_cov(ca, cb, sigma2, phi, 0.0),
                std_err: (var / n).sqrt(),
            }
        })
        .collect()
}

// ---- metric oracles ----

use vslab::metrics::{mae, morans_i, rmse, Contiguity, SpatialWeights, WeightNormalization};

pub fn rmse_oracle(p: &[f64], t: &[f64], m: &[bool]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if m[i] {
            s += (p[i] - t[i]) * (p[i] - t[i]);
            n += 1.0;
        }
    }
    (s / n).sqrt()
}

pub fn mae_oracle(p: &[f64], t: &[f64], m: &[bool]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if m[i] {
            s += (p[i] - t[i]).abs();
            n += 1.0;
        }
    }
    s / n
}

/// Moran's I with an explicit `n × n` weight matrix.
pub fn morans_oracle(x: &[f64], h: usize, w: usize, queen: bool, row_std: bool) -> f64 {
    let n = h * w;
    let mut wm = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dr = (i / w).abs_diff(j / w);
            let dc = (i % w).abs_diff(j % w);
            let adj = if queen { dr.max(dc) == 1 } else { dr + dc == 1 };
            wm[i][j] = f64::from(adj);
        }
        if row_std {
            let s: f64 = wm[i].iter().sum();
            wm[i].iter_mut().for_each(|v| *v /= s);
        }
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += wm[i][j] * (x[i] - mean) * (x[j] - mean);
            wsum += wm[i][j];
        }
    }
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    n as f64 / wsum * num / den
}

pub struct MetricCheck {
    /// Largest difference from the double-loop oracles.
    pub oracle: f64,
    /// Largest change of Moran's I under `a·x + b`.
    pub invariance: f64,
}

pub fn metric_check(fields: usize, seed: u64) -> MetricCheck {
    let mut rng = rng_from_seed(seed);
    let mut out = MetricCheck {
        oracle: 0.0,
        invariance: 0.0,
    };
    let (h, w) = (5, 5);
    for _ in 0..fields {
        let p: Vec<f64> = (0..h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..h * w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut m: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.6)).collect();
        m[7] = true;
        let (pg, tg) = (
            GridField::new(h, w, p.clone()).unwrap(),
            GridField::new(h, w, t.clone()).unwrap(),
        );
        let mask = ObservationMask::new(h, w, m.clone()).unwrap();
        let mut diff = (rmse(&pg, &tg, &mask).unwrap() - rmse_oracle(&p, &t, &m)).abs();
        diff = diff.max((mae(&pg, &tg, &mask).unwrap() - mae_oracle(&p, &t, &m)).abs());
        for queen in [false, true] {
            for row_std in [false, true] {
                let sw = SpatialWeights {
                    scheme: if queen {
                        Contiguity::Queen
                    } else {
                        Contiguity::Rook
                    },
                    normalization: if row_std {
                        WeightNormalization::RowStandardized
                    } else {
                        WeightNormalization::Binary
                    },
                };
                let i = morans_i(&pg, &sw).unwrap();
                diff = diff.max((i - morans_oracle(&p, h, w, queen, row_std)).abs());
                let a = rng.random_range(0.1..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let b = rng.random_range(-100.0..100.0);
                let moved = GridField::new(h, w, p.iter().map(|v| a * v + b).collect()).unwrap();
                let inv = (morans_i(&moved, &sw).unwrap() - i).abs();
                out.invariance = out.invariance.max(inv);
            }
        }
        out.oracle = out.oracle.max(diff);
    }
    out
}

// ---- partial convolution reduction ----

use vslab::model::{build_unet, Downsampling, UNetConfig};

/// Max abs difference between partial and standard networks under a full
/// mask, over `configs` random architectures.
pub fn pconv_reduction(configs: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for i in 0..configs {
        let cfg = UNetConfig {
            depth: rng.random_range(1..=3),
            base_channels: rng.random_range(2..=8),
            kernel_size: [3, 5][i % 2],
            partial_conv: true,
            in_channels: rng.random_range(1..=2),
            downsampling: if rng.random_bool(0.5) {
                Downsampling::MaxPool
            } else {
                Downsampling::StridedConv
            },
            ..UNetConfig::ml_vsl()
        };
        let std_cfg = UNetConfig {
            partial_conv: false,
            ..cfg
        };
        let net_seed = rng.random();
        let partial = build_unet(&cfg, net_seed).unwrap();
        let standard = build_unet(&std_cfg, net_seed).unwrap();
        // sizes that need no padding; padded border cells are unobserved
        let unit = 1 << cfg.depth;
        let h = unit * rng.random_range(1..=4);
        let w = unit * rng.random_range(1..=4);
        let input = uniform(&mut rng, &[cfg.in_channels, h, w]);
        let mask = Tensor::new(vec![1, h, w], vec![1.0; h * w]).unwrap();
        let a = partial.predict(&input, &mask).unwrap();
        let b = standard.predict(&input, &mask).unwrap();
        assert_eq!(a.shape, b.shape);
        for (x, y) in a.data.iter().zip(&b.data) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
