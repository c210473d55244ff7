//! Same-size 2-D convolution (zero padding `k/2`) and partial convolution,
//! lowered to a matrix product over an im2col buffer.

use super::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `C = op(A)·op(B) + beta·C`, row-major, `op(A)` is `m×k`, `op(B)` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are checked above against the dimensions, and the
    // strides describe exactly those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows indexed by `(channel, ky, kx)`, columns by output pixel.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut cols = vec![0.0; c * k * k * hw];
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k * k + ky * k + kx) * hw;
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let s = sr as usize * w;
                    let d = row + r * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    cols[d + x0..d + x1].copy_from_slice(&src[s + sx0..s + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut x = vec![0.0; c * hw];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k * k + ky * k + kx) * hw;
                let dy = ky as isize - p;
                let dx = kx as isize - p;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let d = ch * hw + sr as usize * w + (x0 as isize + dx) as usize;
                    let s = row + r * w + x0;
                    for (a, b) in x[d..d + (x1 - x0)].iter_mut().zip(&cols[s..s + (x1 - x0)]) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

#[derive(Debug)]
pub(super) struct ConvSaved {
    pub x: Var,
    pub w: Var,
    pub b: Var,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    k: usize,
    cols: Vec<f64>,
}

#[derive(Debug)]
pub(super) struct PConvSaved {
    conv: ConvSaved,
    pub x: Var,
    pub w: Var,
    pub b: Var,
    mask: Vec<f64>,
    /// Renormalisation per pixel, 0 where the window held no valid input.
    ratio: Vec<f64>,
}

pub(super) struct ConvGrads {
    pub x: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

fn conv_shapes(tape: &Tape, x: Var, w: Var, b: Var) -> Result<(usize, usize, usize, usize, usize)> {
    let (cin, h, wd) = tape.value(x).chw()?;
    let ws = &tape.value(w).shape;
    let [cout, wcin, k, k2] = ws[..] else {
        return Err(Error::Shape(format!(
            "conv weight must be [out, in, k, k], got {ws:?}"
        )));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv kernel must be square and odd, got {k}x{k2}"
        )));
    }
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv expects {wcin} input channels, got {cin}"
        )));
    }
    if tape.value(b).shape != [cout] {
        return Err(Error::Shape(format!(
            "conv bias must be [{cout}], got {:?}",
            tape.value(b).shape
        )));
    }
    Ok((cin, cout, h, wd, k))
}

/// Validates a single-channel binary mask and snaps it to exact 0/1.
fn binary_mask(mask: &Tensor, h: usize, w: usize) -> Result<Vec<f64>> {
    let (mc, mh, mw) = mask.chw()?;
    if mc != 1 || (mh, mw) != (h, w) {
        return Err(Error::Shape(format!(
            "mask must be [1, {h}, {w}], got {:?}",
            mask.shape
        )));
    }
    mask.data
        .iter()
        .map(|&m| {
            if (m - 1.0).abs() <= 1e-9 {
                Ok(1.0)
            } else if m.abs() <= 1e-9 {
                Ok(0.0)
            } else {
                Err(Error::Mask(format!("mask entry {m} is not binary")))
            }
        })
        .collect()
}

impl Tape {
    /// Same-size convolution of `x` (`[c, h, w]`) with weight `[o, c, k, k]`
    /// and bias `[o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, cout, h, wd, k) = conv_shapes(self, x, w, b)?;
        let hw = h * wd;
        let cols = im2col(&self.value(x).data, cin, h, wd, k);
        let mut out = vec![0.0; cout * hw];
        gemm(
            cout,
            cin * k * k,
            hw,
            &self.value(w).data,
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let bias = &self.value(b).data;
        for o in 0..cout {
            out[o * hw..(o + 1) * hw]
                .iter_mut()
                .for_each(|v| *v += bias[o]);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let saved = ConvSaved {
            x,
            w,
            b,
            cin,
            cout,
            h,
            wd,
            k,
            cols,
        };
        self.push(
            Tensor {
                shape: vec![cout, h, wd],
                data: out,
            },
            Op::Conv(saved),
            rg,
            "conv2d",
        )
    }

    /// Partial convolution. Returns the output and the updated mask, which is
    /// 1 wherever the window held at least one valid input. The window size
    /// used in the renormalisation counts only cells inside the grid, so a
    /// full mask reproduces [`Tape::conv2d`] exactly.
    pub fn pconv2d(&mut self, x: Var, mask: &Tensor, w: Var, b: Var) -> Result<(Var, Tensor)> {
        let (cin, cout, h, wd, k) = conv_shapes(self, x, w, b)?;
        let m = binary_mask(mask, h, wd)?;
        let hw = h * wd;
        let window = im2col(&m, 1, h, wd, k);
        let inside = im2col(&vec![1.0; hw], 1, h, wd, k);
        let mut ratio = vec![0.0; hw];
        for (p, r) in ratio.iter_mut().enumerate() {
            let valid: f64 = (0..k * k).map(|j| window[j * hw + p]).sum();
            if valid > 0.0 {
                let total: f64 = (0..k * k).map(|j| inside[j * hw + p]).sum();
                *r = total / valid;
            }
        }
        let xv = &self.value(x).data;
        let mut xm = Vec::with_capacity(xv.len());
        for ch in 0..cin {
            xm.extend(
                xv[ch * hw..(ch + 1) * hw]
                    .iter()
                    .zip(&m)
                    .map(|(a, b)| a * b),
            );
        }
        let cols = im2col(&xm, cin, h, wd, k);
        let mut out = vec![0.0; cout * hw];
        gemm(
            cout,
            cin * k * k,
            hw,
            &self.value(w).data,
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let bias = &self.value(b).data;
        for o in 0..cout {
            for (v, &r) in out[o * hw..(o + 1) * hw].iter_mut().zip(&ratio) {
                *v = if r > 0.0 { *v * r + bias[o] } else { 0.0 };
            }
        }
        let new_mask: Vec<f64> = ratio
            .iter()
            .map(|&r| if r > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let conv = ConvSaved {
            x,
            w,
            b,
            cin,
            cout,
            h,
            wd,
            k,
            cols,
        };
        let saved = PConvSaved {
            conv,
            x,
            w,
            b,
            mask: m,
            ratio,
        };
        let out = self.push(
            Tensor {
                shape: vec![cout, h, wd],
                data: out,
            },
            Op::PConv(saved),
            rg,
            "pconv2d",
        )?;
        Ok((
            out,
            Tensor {
                shape: vec![1, h, wd],
                data: new_mask,
            },
        ))
    }
}

fn linear_backward(tape: &Tape, s: &ConvSaved, g: &[f64]) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let hw = s.h * s.wd;
    let kk = s.cin * s.k * s.k;
    let gw = tape.rg(s.w).then(|| {
        let mut gw = vec![0.0; s.cout * kk];
        gemm(s.cout, hw, kk, g, false, &s.cols, true, 0.0, &mut gw);
        gw
    });
    let gx = tape.rg(s.x).then(|| {
        let mut gcols = vec![0.0; kk * hw];
        gemm(
            kk,
            s.cout,
            hw,
            &tape.value(s.w).data,
            true,
            g,
            false,
            0.0,
            &mut gcols,
        );
        col2im(&gcols, s.cin, s.h, s.wd, s.k)
    });
    (gx, gw)
}

pub(super) fn conv_backward(tape: &Tape, s: &ConvSaved, g: &[f64]) -> ConvGrads {
    let hw = s.h * s.wd;
    let (gx, gw) = linear_backward(tape, s, g);
    let gb = tape.rg(s.b).then(|| {
        (0..s.cout)
            .map(|o| g[o * hw..(o + 1) * hw].iter().sum())
            .collect()
    });
    ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}

pub(super) fn pconv_backward(tape: &Tape, s: &PConvSaved, g: &[f64]) -> ConvGrads {
    let c = &s.conv;
    let hw = c.h * c.wd;
    let mut scaled = g.to_vec();
    for o in 0..c.cout {
        for (v, &r) in scaled[o * hw..(o + 1) * hw].iter_mut().zip(&s.ratio) {
            *v *= r;
        }
    }
    let (gx, gw) = linear_backward(tape, c, &scaled);
    let gx = gx.map(|mut gx| {
        for ch in 0..c.cin {
            gx[ch * hw..(ch + 1) * hw]
                .iter_mut()
                .zip(&s.mask)
                .for_each(|(a, m)| *a *= m);
        }
        gx
    });
    let gb = tape.rg(s.b).then(|| {
        (0..c.cout)
            .map(|o| {
                g[o * hw..(o + 1) * hw]
                    .iter()
                    .zip(&s.ratio)
                    .filter(|(_, &r)| r > 0.0)
                    .map(|(v, _)| v)
                    .sum()
            })
            .collect()
    });
    ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}

/// Logical-OR 2×2 pooling of a `[1, h, w]` mask.
pub fn mask_pool(mask: &Tensor) -> Result<Tensor> {
    let (c, h, w) = mask.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "mask pooling needs even dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let any = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .any(|(a, b)| mask.data[ch * h * w + (2 * r + a) * w + 2 * col + b] > 0.5);
                data[ch * oh * ow + r * ow + col] = if any { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data,
    })
}

/// Mask counterpart of [`Tape::subsample2`].
pub fn mask_subsample(mask: &Tensor) -> Result<Tensor> {
    let (c, h, w) = mask.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "mask downsampling needs even dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            data.extend((0..ow).map(|col| mask.data[ch * h * w + 2 * r * w + 2 * col]));
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data,
    })
}

pub fn mask_upsample(mask: &Tensor) -> Result<Tensor> {
    let (c, h, w) = mask.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut data = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                data[ch * oh * ow + r * ow + col] = mask.data[ch * h * w + (r / 2) * w + col / 2];
            }
        }
    }
    Ok(Tensor {
        shape: vec![c, oh, ow],
        data,
    })
}

pub fn mask_or(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "mask union of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| if *x > 0.5 || *y > 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}
