//! A small reverse-mode differentiation engine over dense `f64` tensors.
//!
//! A [`Tape`] records every forward operation in execution order together
//! with whatever it needs for its backward pass; [`Tape::backward`] walks the
//! record in reverse. A tape is single-use: build a fresh one per iteration.
//! Feature maps have shape `[channels, height, width]`.

mod adam;
mod conv;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{mask_or, mask_pool, mask_subsample, mask_upsample};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a feature map.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a [c, h, w] tensor, got {:?}",
                self.shape
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv(conv::ConvSaved),
    PConv(conv::PConvSaved),
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Subsample(Var),
    Concat(Var, Var),
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MeanSquare(Var),
    MaskedMse {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<f64>,
        count: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite value produced by {what}"
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Moves the gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].grad.take()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a.max(0.0)).collect(),
        };
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg, "relu")
    }

    /// 2×2 max pooling with stride 2.
    pub fn downsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "downsampling needs even dimensions, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.nodes[x.0].value.data;
        let mut data = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let base = ch * h * w;
                    let cands = [
                        base + 2 * r * w + 2 * col,
                        base + 2 * r * w + 2 * col + 1,
                        base + (2 * r + 1) * w + 2 * col,
                        base + (2 * r + 1) * w + 2 * col + 1,
                    ];
                    let best =
                        cands
                            .iter()
                            .copied()
                            .fold(cands[0], |b, i| if src[i] > src[b] { i } else { b });
                    data.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data,
            },
            Op::MaxPool { x, argmax },
            rg,
            "downsample2",
        )
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let src = &self.nodes[x.0].value.data;
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    data[ch * oh * ow + r * ow + col] = src[ch * h * w + (r / 2) * w + col / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data,
            },
            Op::Upsample(x),
            rg,
            "upsample2",
        )
    }

    /// Keeps every second row and column, starting at the first.
    pub fn subsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "downsampling needs even dimensions, got {h}x{w}"
            )));
        }
        let src = &self.value(x).data;
        let (oh, ow) = (h / 2, w / 2);
        let mut data = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for r in 0..oh {
                data.extend((0..ow).map(|col| src[ch * h * w + 2 * r * w + 2 * col]));
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, oh, ow],
                data,
            },
            Op::Subsample(x),
            rg,
            "subsample2",
        )
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Shape(format!("concat of {ha}x{wa} with {hb}x{wb}")));
        }
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor {
                shape: vec![ca + cb, ha, wa],
                data,
            },
            Op::Concat(a, b),
            rg,
            "concat",
        )
    }

    /// Spatial window `[top, top+h) × [left, left+w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (c, ih, iw) = self.value(x).chw()?;
        if top + h > ih || left + w > iw {
            return Err(Error::Shape(format!(
                "crop {h}x{w}+{top}+{left} outside {ih}x{iw}"
            )));
        }
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for r in 0..h {
                let s = ch * ih * iw + (top + r) * iw + left;
                data.extend_from_slice(&src[s..s + w]);
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor {
                shape: vec![c, h, w],
                data,
            },
            Op::Crop { x, top, left },
            rg,
            "crop",
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|a| a * c).collect(),
        };
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg, "scale")
    }

    /// Scalar `mean(x²)`.
    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.data.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanSquare(x), rg, "mean_square")
    }

    /// Scalar `Σ M (pred − target)² / Σ M` over a single-channel prediction.
    pub fn masked_mse(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.len() != mask.len() {
            return Err(Error::Shape(format!(
                "masked mse over {} predictions, {} targets, {} mask entries",
                p.len(),
                target.len(),
                mask.len()
            )));
        }
        let count: f64 = mask.iter().sum();
        if !(count > 0.0) {
            return Err(Error::InsufficientData(
                "masked loss with no observed cells".into(),
            ));
        }
        let s: f64 = p
            .data
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((a, t), m)| m * (a - t) * (a - t))
            .sum();
        let rg = self.rg(pred);
        self.push(
            Tensor::scalar(s / count),
            Op::MaskedMse {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
            "masked_mse",
        )
    }

    fn acc(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(g.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss. Calling it twice on one tape is an
    /// error; gradients are not zeroed in between.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.nodes[i].grad = Some(g);
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(&op, i, &g);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op, i: usize, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Conv(saved) => {
                let grads = conv::conv_backward(self, saved, g);
                self.apply_conv_grads(saved.x, saved.w, saved.b, grads);
            }
            Op::PConv(saved) => {
                let grads = conv::pconv_backward(self, saved, g);
                self.apply_conv_grads(saved.x, saved.w, saved.b, grads);
            }
            Op::Relu(x) => {
                let gx: Vec<f64> = self.nodes[i]
                    .value
                    .data
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| if y > 0.0 { gi } else { 0.0 })
                    .collect();
                self.acc(*x, &gx);
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (&j, &gi) in argmax.iter().zip(g) {
                    gx[j] += gi;
                }
                self.acc(*x, &gx);
            }
            Op::Upsample(x) => {
                let (c, h, w) = self.value(*x).chw().expect("checked in forward");
                let (oh, ow) = (2 * h, 2 * w);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            gx[ch * h * w + (r / 2) * w + col / 2] +=
                                g[ch * oh * ow + r * ow + col];
                        }
                    }
                }
                self.acc(*x, &gx);
            }
            Op::Subsample(x) => {
                let (c, h, w) = self.value(*x).chw().expect("checked in forward");
                let (oh, ow) = (h / 2, w / 2);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            gx[ch * h * w + 2 * r * w + 2 * col] = g[ch * oh * ow + r * ow + col];
                        }
                    }
                }
                self.acc(*x, &gx);
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                self.acc(*a, &g[..na]);
                self.acc(*b, &g[na..]);
            }
            Op::Crop { x, top, left } => {
                let (c, ih, iw) = self.value(*x).chw().expect("checked in forward");
                let (_, h, w) = self.nodes[i].value.chw().expect("checked in forward");
                let mut gx = vec![0.0; c * ih * iw];
                for ch in 0..c {
                    for r in 0..h {
                        let d = ch * ih * iw + (top + r) * iw + left;
                        let s = ch * h * w + r * w;
                        gx[d..d + w].copy_from_slice(&g[s..s + w]);
                    }
                }
                self.acc(*x, &gx);
            }
            Op::Add(a, b) => {
                self.acc(*a, g);
                self.acc(*b, g);
            }
            Op::Sub(a, b) => {
                self.acc(*a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.acc(*b, &neg);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.acc(*x, &gx);
            }
            Op::MeanSquare(x) => {
                let v = &self.value(*x).data;
                let k = 2.0 * g[0] / v.len() as f64;
                let gx: Vec<f64> = v.iter().map(|a| k * a).collect();
                self.acc(*x, &gx);
            }
            Op::MaskedMse {
                pred,
                target,
                mask,
                count,
            } => {
                let p = &self.value(*pred).data;
                let k = 2.0 * g[0] / count;
                let gx: Vec<f64> = p
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((a, t), m)| k * m * (a - t))
                    .collect();
                self.acc(*pred, &gx);
            }
        }
    }

    fn apply_conv_grads(&mut self, x: Var, w: Var, b: Var, grads: conv::ConvGrads) {
        if let Some(gx) = grads.x {
            self.acc(x, &gx);
        }
        if let Some(gw) = grads.w {
            self.acc(w, &gw);
        }
        if let Some(gb) = grads.b {
            self.acc(b, &gb);
        }
    }
}
