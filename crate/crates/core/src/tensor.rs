//! Dense n-dimensional `f64` arrays.
//!
//! Layout is row-major: the last axis varies fastest, and element
//! `(i0, .., ik)` lives at `sum(i_j * stride_j)` with
//! `stride_j = prod(shape[j+1..])`. Checkpoints and explanation files store
//! the flat buffer in this order.
//!
//! `conv2d` is a cross-correlation (the kernel is not flipped), which is the
//! usual deep-learning convention.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Population variance (divides by N).
    Variance,
    Max,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let valid = !shape.is_empty()
        && shape.iter().all(|&e| e >= 1)
        && shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)) == Some(len);
    if valid {
        Ok(())
    } else {
        Err(Error::InvalidShape {
            shape: shape.to_vec(),
            len,
        })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Tensor { shape, data })
    }

    /// # Panics
    /// If `shape` is empty or has a zero extent.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        check_shape(shape, len).expect("tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Tensor::new(vec![values.len()], values.to_vec()).expect("non-empty slice")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    /// Flat offset of a multi-index, or `None` if any coordinate is out of range.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            off = off * e + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(BinaryOp::Mul, self, other)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        same_shape(self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.data.iter().copied())
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the first maximal element.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(compensated_sum(self.data.iter().map(|v| v * v)))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let [r, c] = dims::<2>("transpose", self)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape == b.shape {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        })
    }
}

fn dims<const N: usize>(op: &'static str, t: &Tensor) -> Result<[usize; N]> {
    t.shape.as_slice().try_into().map_err(|_| Error::IncompatibleShape {
        op,
        expected: vec![0; N],
        got: t.shape.clone(),
    })
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if libm::fabs(sum) >= libm::fabs(v) {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn elementwise(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b)?;
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Reduces `t` over `axes`; `None` reduces over every axis.
///
/// The reduced axes are dropped from the result. Reducing every axis yields
/// shape `[1]`; reducing over an empty axis set returns `t` unchanged.
pub fn reduce(op: ReduceOp, t: &Tensor, axes: Option<&[usize]>) -> Result<Tensor> {
    let rank = t.rank();
    let mut reduced = vec![false; rank];
    match axes {
        None => reduced.iter_mut().for_each(|r| *r = true),
        Some(axes) => {
            for &axis in axes {
                if axis >= rank {
                    return Err(Error::AxisOutOfRange { axis, rank });
                }
                reduced[axis] = true;
            }
        }
    }
    if !reduced.iter().any(|&r| r) {
        return Ok(t.clone());
    }

    let kept: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).collect();
    let out_shape: Vec<usize> = if kept.is_empty() {
        vec![1]
    } else {
        kept.iter().map(|&a| t.shape[a]).collect()
    };
    let out_len: usize = out_shape.iter().product();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); out_len];

    let in_strides = t.strides();
    for (flat, &v) in t.data.iter().enumerate() {
        let mut out_idx = 0;
        for &a in &kept {
            let coord = (flat / in_strides[a]) % t.shape[a];
            out_idx = out_idx * t.shape[a] + coord;
        }
        groups[out_idx].push(v);
    }

    let data = groups.iter().map(|g| reduce_slice(op, g)).collect::<Vec<_>>();
    Tensor::new(out_shape, data)
}

fn reduce_slice(op: ReduceOp, g: &[f64]) -> f64 {
    let n = g.len() as f64;
    match op {
        ReduceOp::Sum => compensated_sum(g.iter().copied()),
        ReduceOp::Mean => compensated_sum(g.iter().copied()) / n,
        ReduceOp::Variance => {
            let mean = compensated_sum(g.iter().copied()) / n;
            compensated_sum(g.iter().map(|v| (v - mean) * (v - mean))) / n
        }
        ReduceOp::Max => g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = dims::<2>("matmul", a)?;
    let [k2, n] = dims::<2>("matmul", b)?;
    if k != k2 {
        return Err(Error::IncompatibleShape {
            op: "matmul",
            expected: vec![k, n],
            got: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Geometry of a 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    /// Output spatial extent, or `None` if the window does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0 || self.kh == 0 || self.kw == 0 {
            return None;
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kh || pw < self.kw {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

/// 2-D cross-correlation. `input` is NCHW, `kernel` is OIHW, zero padding
/// is applied symmetrically on both spatial axes.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let [n, c, h, w] = dims::<4>("conv2d", input)?;
    let [o, kc, kh, kw] = dims::<4>("conv2d", kernel)?;
    if kc != c {
        return Err(Error::IncompatibleShape {
            op: "conv2d",
            expected: vec![o, c, kh, kw],
            got: kernel.shape.clone(),
        });
    }
    let win = Window {
        kh,
        kw,
        stride,
        padding,
    };
    let (oh, ow) = win.output_hw(h, w).ok_or_else(|| Error::IncompatibleShape {
        op: "conv2d",
        expected: vec![
            n,
            c,
            kh.saturating_sub(2 * padding).max(1),
            kw.saturating_sub(2 * padding).max(1),
        ],
        got: input.shape.clone(),
    })?;

    let mut out = vec![0.0; n * o * oh * ow];
    let x = &input.data;
    let k = &kernel.data;
    for b in 0..n {
        for oc in 0..o {
            let out_base = (b * o + oc) * oh * ow;
            for ic in 0..c {
                let in_base = (b * c + ic) * h * w;
                let k_base = (oc * c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = k[k_base + ky * kw + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            let orow = out_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                out[orow + ox] += kv * x[row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    kernel: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [n, o, oh, ow] = dims::<4>("conv2d_backward_input", grad_out)?;
    let [_, c, kh, kw] = dims::<4>("conv2d_backward_input", kernel)?;
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut gx = vec![0.0; n * c * h * w];
    let g = &grad_out.data;
    let k = &kernel.data;
    for b in 0..n {
        for oc in 0..o {
            let out_base = (b * o + oc) * oh * ow;
            for ic in 0..c {
                let in_base = (b * c + ic) * h * w;
                let k_base = (oc * c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = k[k_base + ky * kw + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            let orow = out_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                gx[row + ix as usize] += kv * g[orow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx)
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_backward_kernel(
    input: &Tensor,
    grad_out: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [n, c, h, w] = dims::<4>("conv2d_backward_kernel", input)?;
    let [_, o, oh, ow] = dims::<4>("conv2d_backward_kernel", grad_out)?;
    let (kh, kw) = (kernel_shape[2], kernel_shape[3]);
    let mut gk = vec![0.0; o * c * kh * kw];
    let x = &input.data;
    let g = &grad_out.data;
    for b in 0..n {
        for oc in 0..o {
            let out_base = (b * o + oc) * oh * ow;
            for ic in 0..c {
                let in_base = (b * c + ic) * h * w;
                let k_base = (oc * c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = in_base + iy as usize * w;
                            let orow = out_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[row + ix as usize] * g[orow + ox];
                            }
                        }
                        gk[k_base + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(kernel_shape.to_vec(), gk)
}

/// Max pooling over NCHW input without padding.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_argmax(input, window, stride).map(|(t, _)| t)
}

/// Max pooling that also returns, for every output element, the flat input
/// offset it was taken from. Ties resolve to the first element in row-major
/// window order.
pub fn maxpool2d_with_argmax(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims::<4>("maxpool2d", input)?;
    let win = Window {
        kh: window,
        kw: window,
        stride,
        padding: 0,
    };
    let (oh, ow) = win.output_hw(h, w).ok_or_else(|| Error::IncompatibleShape {
        op: "maxpool2d",
        expected: vec![n, c, window.max(1), window.max(1)],
        got: input.shape.clone(),
    })?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input.data[idx] > input.data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input.data[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

/// Bilinear resize of a rank-2 `[H, W]` map using half-pixel centers with
/// edge clamping (the `align_corners = false` convention).
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w] = dims::<2>("resize_bilinear", t)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape {
            shape: vec![out_h, out_w],
            len: 0,
        });
    }
    let coord = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = libm::floor(s) as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let v00 = t.data[y0 * w + x0];
            let v01 = t.data[y0 * w + x1];
            let v10 = t.data[y1 * w + x0];
            let v11 = t.data[y1 * w + x1];
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}
