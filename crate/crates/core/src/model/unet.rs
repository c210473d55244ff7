//! U-Net style encoder/decoder with optional partial convolutions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mask_or, mask_pool, mask_subsample, mask_upsample, Tape, Tensor, Var};
use crate::error::{param_err, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsampling {
    /// 2×2 max pooling; masks are OR-pooled.
    #[default]
    MaxPool,
    /// Extra convolution followed by stride-2 subsampling.
    StridedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    /// Number of down/up stages.
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub partial_conv: bool,
    pub in_channels: usize,
    pub downsampling: Downsampling,
    /// Zero-pad grids whose sides are not multiples of `2^depth`.
    pub pad: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig::ml_vsl()
    }
}

impl UNetConfig {
    pub fn ml_vsl() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 32,
            kernel_size: 3,
            partial_conv: true,
            in_channels: 1,
            downsampling: Downsampling::MaxPool,
            pad: true,
        }
    }

    pub fn ml_base() -> Self {
        UNetConfig {
            partial_conv: false,
            in_channels: 2,
            ..UNetConfig::ml_vsl()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return param_err(format!("depth must be in 1..=8, got {}", self.depth));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return param_err("channel counts must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return param_err(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(out, in, k)` of every convolution, in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        for l in 0..=self.depth {
            let cin = if l == 0 {
                self.in_channels
            } else {
                self.width(l - 1)
            };
            shapes.push((self.width(l), cin, k));
            shapes.push((self.width(l), self.width(l), k));
        }
        if self.downsampling == Downsampling::StridedConv {
            for l in 0..self.depth {
                shapes.push((self.width(l), self.width(l), k));
            }
        }
        for l in (0..self.depth).rev() {
            shapes.push((self.width(l), self.width(l + 1) + self.width(l), k));
            shapes.push((self.width(l), self.width(l), k));
        }
        shapes.push((1, self.width(0), 1));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(o, i, k)| o * i * k * k + o)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    pub layers: Vec<ConvLayer>,
}

/// Initialises every layer with Kaiming-uniform weights
/// (`±√(6 / fan_in)`) and biases in `±1/√fan_in`.
pub fn build_unet(cfg: &UNetConfig, seed: u64) -> Result<UNet> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let layers = cfg
        .layer_shapes()
        .into_iter()
        .map(|(o, i, k)| {
            let fan_in = (i * k * k) as f64;
            let wb = (6.0 / fan_in).sqrt();
            let bb = 1.0 / fan_in.sqrt();
            let weight: Vec<f64> = (0..o * i * k * k)
                .map(|_| rng.random_range(-wb..wb))
                .collect();
            let bias: Vec<f64> = (0..o).map(|_| rng.random_range(-bb..bb)).collect();
            Ok(ConvLayer {
                weight: Tensor::new(vec![o, i, k, k], weight)?,
                bias: Tensor::new(vec![o], bias)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UNet { cfg: *cfg, layers })
}

/// Zero padding applied before the forward pass: `(top, left, padded_h, padded_w)`.
pub fn padding_for(cfg: &UNetConfig, h: usize, w: usize) -> Result<(usize, usize, usize, usize)> {
    let m = 1usize << cfg.depth;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) != (h, w) && !cfg.pad {
        return Err(Error::Shape(format!(
            "grid {h}x{w} is not a multiple of {m} and padding is disabled"
        )));
    }
    Ok(((ph - h) / 2, (pw - w) / 2, ph, pw))
}

fn pad(t: &Tensor, top: usize, left: usize, ph: usize, pw: usize) -> Result<Tensor> {
    let (c, h, w) = t.chw()?;
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let mut out = Tensor::zeros(vec![c, ph, pw]);
    for ch in 0..c {
        for r in 0..h {
            let d = ch * ph * pw + (top + r) * pw + left;
            out.data[d..d + w]
                .copy_from_slice(&t.data[ch * h * w + r * w..ch * h * w + (r + 1) * w]);
        }
    }
    Ok(out)
}

impl UNet {
    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    /// Registers every weight and bias as a tape leaf, in parameter order.
    pub fn leaves(&self, tape: &mut Tape, requires_grad: bool) -> Result<Vec<(Var, Var)>> {
        self.layers
            .iter()
            .map(|l| {
                Ok((
                    tape.leaf(l.weight.clone(), requires_grad)?,
                    tape.leaf(l.bias.clone(), requires_grad)?,
                ))
            })
            .collect()
    }

    /// Flat parameter buffers, weights then bias per layer.
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight.data, &mut l.bias.data])
            .collect()
    }

    /// Forward pass on `input` (`[in_channels, h, w]`) with a `[1, h, w]`
    /// validity mask, returning the `[1, h, w]` output. The mask only
    /// matters in partial-convolution mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[(Var, Var)],
        input: &Tensor,
        mask: &Tensor,
    ) -> Result<Var> {
        self.forward_masked(tape, params, input, mask)
            .map(|(y, _)| y)
    }

    /// [`UNet::forward`] that also returns the validity mask reaching the
    /// output layer (all ones for a standard-conv network), cropped to `h × w`.
    pub fn forward_masked(
        &self,
        tape: &mut Tape,
        params: &[(Var, Var)],
        input: &Tensor,
        mask: &Tensor,
    ) -> Result<(Var, Tensor)> {
        let cfg = &self.cfg;
        let (c, h, w) = input.chw()?;
        if c != cfg.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                cfg.in_channels
            )));
        }
        if mask.shape != [1, h, w] {
            return Err(Error::Shape(format!(
                "mask shape {:?} does not match input {h}x{w}",
                mask.shape
            )));
        }
        if params.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter pairs for {} layers",
                params.len(),
                self.layers.len()
            )));
        }
        let (top, left, ph, pw) = padding_for(cfg, h, w)?;
        let x0 = tape.leaf(pad(input, top, left, ph, pw)?, false)?;
        let mut m = pad(mask, top, left, ph, pw)?;
        let d = cfg.depth;
        let enc = &params[..2 * (d + 1)];
        let (strided, rest) = match cfg.downsampling {
            Downsampling::MaxPool => (&params[..0], &params[2 * (d + 1)..]),
            Downsampling::StridedConv => params[2 * (d + 1)..].split_at(d),
        };
        let (dec, last) = rest.split_at(2 * d);

        let mut x = x0;
        let mut skips = Vec::with_capacity(d);
        for l in 0..=d {
            x = self.block(tape, x, &mut m, enc[2 * l], enc[2 * l + 1])?;
            if l < d {
                skips.push((x, m.clone()));
                match cfg.downsampling {
                    Downsampling::MaxPool => {
                        x = tape.downsample2(x)?;
                        m = mask_pool(&m)?;
                    }
                    Downsampling::StridedConv => {
                        let y = self.conv(tape, x, &mut m, strided[l])?;
                        x = tape.subsample2(y)?;
                        m = mask_subsample(&m)?;
                    }
                }
            }
        }
        for pair in dec.chunks(2) {
            let (skip, skip_mask) = skips.pop().expect("one skip per stage");
            let up = tape.upsample2(x)?;
            let cat = tape.concat_channels(up, skip)?;
            m = mask_or(&mask_upsample(&m)?, &skip_mask)?;
            x = self.block(tape, cat, &mut m, pair[0], pair[1])?;
        }
        let out = self.conv(tape, x, &mut m, last[0])?;
        if !cfg.partial_conv {
            m = Tensor::new(vec![1, ph, pw], vec![1.0; ph * pw])?;
        }
        if (ph, pw) == (h, w) {
            return Ok((out, m));
        }
        let mut cropped = Tensor::zeros(vec![1, h, w]);
        for r in 0..h {
            let src = (top + r) * pw + left;
            cropped.data[r * w..(r + 1) * w].copy_from_slice(&m.data[src..src + w]);
        }
        Ok((tape.crop(out, top, left, h, w)?, cropped))
    }

    fn conv(&self, tape: &mut Tape, x: Var, m: &mut Tensor, (w, b): (Var, Var)) -> Result<Var> {
        if self.cfg.partial_conv {
            let (y, nm) = tape.pconv2d(x, m, w, b)?;
            *m = nm;
            Ok(y)
        } else {
            tape.conv2d(x, w, b)
        }
    }

    fn block(
        &self,
        tape: &mut Tape,
        x: Var,
        m: &mut Tensor,
        a: (Var, Var),
        b: (Var, Var),
    ) -> Result<Var> {
        let y = self.conv(tape, x, m, a)?;
        let y = tape.relu(y)?;
        let y = self.conv(tape, y, m, b)?;
        tape.relu(y)
    }

    /// Inference without gradients.
    pub fn predict(&self, input: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.leaves(&mut tape, false)?;
        let out = self.forward(&mut tape, &params, input, mask)?;
        Ok(tape.value(out).clone())
    }
}
