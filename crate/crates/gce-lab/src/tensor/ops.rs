//! Forward operations and their vector-Jacobian products.
//!
//! Every op validates shapes, computes its output eagerly, and rejects
//! non-finite results. A graph node is recorded only when some input
//! requires a gradient, so constant-only evaluation (model inference,
//! landscape sweeps) carries no graph overhead.

use super::{Op, Tensor};
use crate::error::{Error, Result};

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::BadShape {
            op,
            shape: t.shape().to_vec(),
            expected: "rank-2".into(),
        }),
    }
}

fn rank4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::BadShape {
            op,
            shape: t.shape().to_vec(),
            expected: "rank-4 (batch, channel, height, width)".into(),
        }),
    }
}

fn build(
    op_name: &'static str,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    parent: impl FnOnce() -> Op,
) -> Result<Tensor> {
    ensure_finite(op_name, &data)?;
    let parent = if requires_grad { Some(parent()) } else { None };
    Ok(Tensor::from_parts(shape, data, requires_grad, parent))
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("add", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a + b)
            .collect();
        let rg = self.requires_grad() || rhs.requires_grad();
        build("add", self.shape().to_vec(), data, rg, || {
            Op::Add(self.clone(), rhs.clone())
        })
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a - b)
            .collect();
        let rg = self.requires_grad() || rhs.requires_grad();
        build("sub", self.shape().to_vec(), data, rg, || {
            Op::Sub(self.clone(), rhs.clone())
        })
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a * b)
            .collect();
        let rg = self.requires_grad() || rhs.requires_grad();
        build("mul", self.shape().to_vec(), data, rg, || {
            Op::Mul(self.clone(), rhs.clone())
        })
    }

    pub fn neg(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| -a).collect();
        build("neg", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Neg(self.clone())
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a * factor).collect();
        build(
            "scale",
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            || Op::Scale(self.clone(), factor),
        )
    }

    pub fn add_scalar(&self, term: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a + term).collect();
        build(
            "add_scalar",
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            || Op::AddScalar(self.clone()),
        )
    }

    /// Elementwise `x^p` for a fixed exponent.
    pub fn pow_scalar(&self, exponent: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.powf(exponent)).collect();
        build(
            "pow_scalar",
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            || Op::PowScalar(self.clone(), exponent),
        )
    }

    /// Rank-2 matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = rank2("matmul", self)?;
        let (k2, n) = rank2("matmul", rhs)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let data = matmul_raw(self.data(), rhs.data(), m, k, n);
        let rg = self.requires_grad() || rhs.requires_grad();
        build("matmul", vec![m, n], data, rg, || {
            Op::MatMul(self.clone(), rhs.clone())
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = rank2("transpose", self)?;
        let src = self.data();
        let mut data = vec![0.0; src.len()];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        build("transpose", vec![c, r], data, self.requires_grad(), || {
            Op::Transpose(self.clone())
        })
    }

    /// Adds a length-`m` bias vector to every row of an `[n,m]` matrix.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, m) = rank2("add_row_bias", self)?;
        if bias.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.data();
        let mut data = self.data().to_vec();
        for row in data.chunks_exact_mut(m) {
            for (x, bv) in row.iter_mut().zip(b) {
                *x += bv;
            }
        }
        let rg = self.requires_grad() || bias.requires_grad();
        build("add_row_bias", vec![n, m], data, rg, || {
            Op::AddRowBias(self.clone(), bias.clone())
        })
    }

    /// Adds a per-channel bias to an `[n,c,h,w]` activation.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = rank4("add_channel_bias", self)?;
        if bias.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let b = bias.data();
        let plane = h * w;
        let mut data = self.data().to_vec();
        for ni in 0..n {
            for (ci, &bv) in b.iter().enumerate() {
                let base = (ni * c + ci) * plane;
                for x in &mut data[base..base + plane] {
                    *x += bv;
                }
            }
        }
        let rg = self.requires_grad() || bias.requires_grad();
        build("add_channel_bias", vec![n, c, h, w], data, rg, || {
            Op::AddChannelBias(self.clone(), bias.clone())
        })
    }

    /// 2-D cross-correlation of `[n,cin,h,w]` with `[cout,cin,kh,kw]`.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (n, cin, h, w) = rank4("conv2d", self)?;
        let (cout, cin2, kh, kw) = rank4("conv2d", kernel)?;
        if cin != cin2 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::BadShape {
                op: "conv2d",
                shape: self.shape().to_vec(),
                expected: format!("padded input at least {kh}x{kw}"),
            });
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let data = conv2d_raw(
            self.data(),
            kernel.data(),
            ConvDims {
                n,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                ho,
                wo,
                stride,
                padding,
            },
        );
        let rg = self.requires_grad() || kernel.requires_grad();
        build("conv2d", vec![n, cout, ho, wo], data, rg, || Op::Conv2d {
            input: self.clone(),
            kernel: kernel.clone(),
            stride,
            padding,
        })
    }

    /// Non-overlapping max pooling with a square `window`.
    pub fn maxpool2d(&self, window: usize) -> Result<Tensor> {
        let (n, c, h, w) = rank4("maxpool2d", self)?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::BadShape {
                op: "maxpool2d",
                shape: self.shape().to_vec(),
                expected: format!("height and width divisible by window {window}"),
            });
        }
        let (ho, wo) = (h / window, w / window);
        let src = self.data();
        let mut data = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; data.len()];
        for nc in 0..n * c {
            let in_base = nc * h * w;
            let out_base = nc * ho * wo;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..window {
                        let row = in_base + (oh * window + dy) * w + ow * window;
                        for dx in 0..window {
                            let v = src[row + dx];
                            if v > best {
                                best = v;
                                best_idx = row + dx;
                            }
                        }
                    }
                    data[out_base + oh * wo + ow] = best;
                    argmax[out_base + oh * wo + ow] = best_idx;
                }
            }
        }
        build(
            "maxpool2d",
            vec![n, c, ho, wo],
            data,
            self.requires_grad(),
            || Op::MaxPool2d {
                input: self.clone(),
                argmax,
            },
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.max(0.0)).collect();
        build("relu", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Relu(self.clone())
        })
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.tanh()).collect();
        build("tanh", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Tanh(self.clone())
        })
    }

    /// Natural logarithm. Non-positive inputs surface as a numeric error.
    pub fn log(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.ln()).collect();
        build("log", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Log(self.clone())
        })
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.exp()).collect();
        build("exp", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Exp(self.clone())
        })
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less)
            && lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Equal)
        {
            return Err(Error::InvalidArgument(format!(
                "clamp bounds out of order: {lo} > {hi}"
            )));
        }
        let data = self.data().iter().map(|a| a.clamp(lo, hi)).collect();
        build("clamp", self.shape().to_vec(), data, self.requires_grad(), || {
            Op::Clamp {
                input: self.clone(),
                lo,
                hi,
            }
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        build("sum", vec![1], vec![total], self.requires_grad(), || {
            Op::Sum(self.clone())
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::BadShape {
                op: "mean",
                shape: self.shape().to_vec(),
                expected: "at least one element".into(),
            });
        }
        let total: f64 = self.data().iter().sum();
        let v = total / self.numel() as f64;
        build("mean", vec![1], vec![v], self.requires_grad(), || {
            Op::Mean(self.clone())
        })
    }

    /// Sums each row of an `[n,k]` matrix into an `[n]` vector.
    pub fn row_sum(&self) -> Result<Tensor> {
        let (n, k) = rank2("row_sum", self)?;
        let data = self
            .data()
            .chunks_exact(k)
            .map(|row| row.iter().sum())
            .collect();
        build("row_sum", vec![n], data, self.requires_grad(), || {
            Op::RowSum(self.clone())
        })
    }

    /// Picks `self[i, indices[i]]` from each row.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let (n, k) = rank2("gather", self)?;
        check_row_indices("gather", n, k, indices)?;
        let src = self.data();
        let data = indices
            .iter()
            .enumerate()
            .map(|(i, &j)| src[i * k + j])
            .collect();
        build("gather", vec![n], data, self.requires_grad(), || Op::Gather {
            input: self.clone(),
            indices: indices.to_vec(),
        })
    }

    /// Zeroes `self[i, indices[i]]` in each row, leaving the rest intact.
    pub fn mask_index(&self, indices: &[usize]) -> Result<Tensor> {
        let (n, k) = rank2("mask_index", self)?;
        check_row_indices("mask_index", n, k, indices)?;
        let mut data = self.data().to_vec();
        for (i, &j) in indices.iter().enumerate() {
            data[i * k + j] = 0.0;
        }
        build("mask_index", vec![n, k], data, self.requires_grad(), || {
            Op::MaskIndex {
                input: self.clone(),
                indices: indices.to_vec(),
            }
        })
    }

    /// Divides each row of an `[n,k]` matrix by the matching entry of an
    /// `[n]` vector.
    pub fn div_column(&self, denom: &Tensor) -> Result<Tensor> {
        let (n, k) = rank2("div_column", self)?;
        if denom.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "div_column",
                lhs: self.shape().to_vec(),
                rhs: denom.shape().to_vec(),
            });
        }
        let d = denom.data();
        let mut data = self.data().to_vec();
        for (i, row) in data.chunks_exact_mut(k).enumerate() {
            for x in row.iter_mut() {
                *x /= d[i];
            }
        }
        let rg = self.requires_grad() || denom.requires_grad();
        build("div_column", vec![n, k], data, rg, || Op::DivColumn {
            numer: self.clone(),
            denom: denom.clone(),
        })
    }

    /// Per-row maximum over all columns except `except[i]`.
    pub fn row_max_except(&self, except: &[usize]) -> Result<Tensor> {
        let (n, k) = rank2("row_max_except", self)?;
        if k < 2 {
            return Err(Error::BadShape {
                op: "row_max_except",
                shape: self.shape().to_vec(),
                expected: "at least 2 columns".into(),
            });
        }
        check_row_indices("row_max_except", n, k, except)?;
        let src = self.data();
        let mut data = vec![0.0; n];
        let mut argmax = vec![0usize; n];
        for i in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..k {
                if j == except[i] {
                    continue;
                }
                let v = src[i * k + j];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            data[i] = best;
            argmax[i] = i * k + best_j;
        }
        build("row_max_except", vec![n], data, self.requires_grad(), || {
            Op::RowMaxExcept {
                input: self.clone(),
                argmax,
            }
        })
    }

    /// Elementwise `max(x, floor)`.
    pub fn max_scalar(&self, floor: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a.max(floor)).collect();
        build(
            "max_scalar",
            self.shape().to_vec(),
            data,
            self.requires_grad(),
            || Op::MaxScalar(self.clone(), floor),
        )
    }

    /// Picks `on_true[i]` where `mask[i]`, else `on_false[i]`.
    pub fn where_mask(mask: &[bool], on_true: &Tensor, on_false: &Tensor) -> Result<Tensor> {
        same_shape("where_mask", on_true, on_false)?;
        if mask.len() != on_true.numel() {
            return Err(Error::BadShape {
                op: "where_mask",
                shape: on_true.shape().to_vec(),
                expected: format!("mask of length {}", mask.len()),
            });
        }
        let data = mask
            .iter()
            .zip(on_true.data().iter().zip(on_false.data()))
            .map(|(&m, (a, b))| if m { *a } else { *b })
            .collect();
        let rg = on_true.requires_grad() || on_false.requires_grad();
        build("where_mask", on_true.shape().to_vec(), data, rg, || {
            Op::WhereMask {
                mask: mask.to_vec(),
                on_true: on_true.clone(),
                on_false: on_false.clone(),
            }
        })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::BadShape {
                op: "reshape",
                shape,
                expected: format!("element count {}", self.numel()),
            });
        }
        build("reshape", shape, self.data().to_vec(), self.requires_grad(), || {
            Op::Reshape(self.clone())
        })
    }

    /// Row-wise softmax of an `[n,k]` logit matrix, computed with
    /// max-subtraction so large logits cannot overflow.
    pub fn softmax(&self) -> Result<Tensor> {
        let (n, k) = rank2("softmax", self)?;
        let src = self.data();
        let mut data = vec![0.0; n * k];
        for i in 0..n {
            let row = &src[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * k..(i + 1) * k];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        build("softmax", vec![n, k], data, self.requires_grad(), || {
            Op::Softmax(self.clone())
        })
    }
}

fn check_row_indices(op: &'static str, n: usize, k: usize, indices: &[usize]) -> Result<()> {
    if indices.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{op}: {} indices for {n} rows",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j >= k) {
        return Err(Error::InvalidArgument(format!(
            "{op}: index {bad} out of range for {k} columns"
        )));
    }
    Ok(())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvDims {
    /// Range of output columns whose input column stays in bounds for a
    /// given kernel column.
    fn ow_range(&self, kwi: usize) -> (usize, usize) {
        let lo = if self.padding > kwi {
            (self.padding - kwi).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.padding > kwi {
            ((self.w + self.padding - kwi - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn ih(&self, oh: usize, khi: usize) -> Option<usize> {
        let ih = (oh * self.stride + khi) as isize - self.padding as isize;
        if ih >= 0 && (ih as usize) < self.h {
            Some(ih as usize)
        } else {
            None
        }
    }
}

fn conv2d_raw(input: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.cout * d.ho * d.wo];
    for ni in 0..d.n {
        for co in 0..d.cout {
            let out_base = (ni * d.cout + co) * d.ho * d.wo;
            for ci in 0..d.cin {
                let in_base = (ni * d.cin + ci) * d.h * d.w;
                let k_base = (co * d.cin + ci) * d.kh * d.kw;
                for khi in 0..d.kh {
                    for kwi in 0..d.kw {
                        let wgt = kernel[k_base + khi * d.kw + kwi];
                        let (ow_lo, ow_hi) = d.ow_range(kwi);
                        if ow_hi <= ow_lo {
                            continue;
                        }
                        for oh in 0..d.ho {
                            let Some(ih) = d.ih(oh, khi) else { continue };
                            let in_row = in_base + ih * d.w;
                            let out_row = out_base + oh * d.wo;
                            if d.stride == 1 {
                                // Contiguous in both buffers: a plain axpy.
                                let in_off = in_row + ow_lo + kwi - d.padding;
                                let len = ow_hi - ow_lo;
                                let out_s = &mut out[out_row + ow_lo..out_row + ow_lo + len];
                                let in_s = &input[in_off..in_off + len];
                                for (o, &iv) in out_s.iter_mut().zip(in_s) {
                                    *o += wgt * iv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * d.stride + kwi - d.padding;
                                    out[out_row + ow] += wgt * input[in_row + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_input_grad(grad: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let mut din = vec![0.0; d.n * d.cin * d.h * d.w];
    for ni in 0..d.n {
        for co in 0..d.cout {
            let out_base = (ni * d.cout + co) * d.ho * d.wo;
            for ci in 0..d.cin {
                let in_base = (ni * d.cin + ci) * d.h * d.w;
                let k_base = (co * d.cin + ci) * d.kh * d.kw;
                for khi in 0..d.kh {
                    for kwi in 0..d.kw {
                        let wgt = kernel[k_base + khi * d.kw + kwi];
                        let (ow_lo, ow_hi) = d.ow_range(kwi);
                        if ow_hi <= ow_lo {
                            continue;
                        }
                        for oh in 0..d.ho {
                            let Some(ih) = d.ih(oh, khi) else { continue };
                            let in_row = in_base + ih * d.w;
                            let out_row = out_base + oh * d.wo;
                            if d.stride == 1 {
                                let in_off = in_row + ow_lo + kwi - d.padding;
                                let len = ow_hi - ow_lo;
                                let din_s = &mut din[in_off..in_off + len];
                                let g_s = &grad[out_row + ow_lo..out_row + ow_lo + len];
                                for (dv, &gv) in din_s.iter_mut().zip(g_s) {
                                    *dv += wgt * gv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * d.stride + kwi - d.padding;
                                    din[in_row + iw] += wgt * grad[out_row + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

fn conv2d_kernel_grad(grad: &[f64], input: &[f64], d: ConvDims) -> Vec<f64> {
    let mut dk = vec![0.0; d.cout * d.cin * d.kh * d.kw];
    for ni in 0..d.n {
        for co in 0..d.cout {
            let out_base = (ni * d.cout + co) * d.ho * d.wo;
            for ci in 0..d.cin {
                let in_base = (ni * d.cin + ci) * d.h * d.w;
                let k_base = (co * d.cin + ci) * d.kh * d.kw;
                for khi in 0..d.kh {
                    for kwi in 0..d.kw {
                        let (ow_lo, ow_hi) = d.ow_range(kwi);
                        if ow_hi <= ow_lo {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oh in 0..d.ho {
                            let Some(ih) = d.ih(oh, khi) else { continue };
                            let in_row = in_base + ih * d.w;
                            let out_row = out_base + oh * d.wo;
                            if d.stride == 1 {
                                let in_off = in_row + ow_lo + kwi - d.padding;
                                let len = ow_hi - ow_lo;
                                let g_s = &grad[out_row + ow_lo..out_row + ow_lo + len];
                                let in_s = &input[in_off..in_off + len];
                                acc += g_s
                                    .iter()
                                    .zip(in_s)
                                    .map(|(&g, &iv)| g * iv)
                                    .sum::<f64>();
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * d.stride + kwi - d.padding;
                                    acc += grad[out_row + ow] * input[in_row + iw];
                                }
                            }
                        }
                        dk[k_base + khi * d.kw + kwi] += acc;
                    }
                }
            }
        }
    }
    dk
}

/// Routes `grad` (the gradient of the loss w.r.t. `op`'s output, whose
/// forward value is `out_data`) to each input via `sink`.
pub(crate) fn vjp(
    op: &Op,
    out_data: &[f64],
    grad: &[f64],
    sink: &mut impl FnMut(&Tensor, &[f64]),
) {
    match op {
        Op::Add(a, b) => {
            sink(a, grad);
            sink(b, grad);
        }
        Op::Sub(a, b) => {
            sink(a, grad);
            if b.requires_grad() {
                let g: Vec<f64> = grad.iter().map(|g| -g).collect();
                sink(b, &g);
            }
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let g: Vec<f64> = grad.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                sink(a, &g);
            }
            if b.requires_grad() {
                let g: Vec<f64> = grad.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                sink(b, &g);
            }
        }
        Op::Neg(a) => {
            let g: Vec<f64> = grad.iter().map(|g| -g).collect();
            sink(a, &g);
        }
        Op::Scale(a, factor) => {
            let g: Vec<f64> = grad.iter().map(|g| g * factor).collect();
            sink(a, &g);
        }
        Op::AddScalar(a) => sink(a, grad),
        Op::PowScalar(a, p) => {
            let g: Vec<f64> = grad
                .iter()
                .zip(a.data())
                .map(|(g, x)| g * p * x.powf(p - 1.0))
                .collect();
            sink(a, &g);
        }
        Op::MatMul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                // dA = g . B^T
                let bd = b.data();
                let mut bt = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        bt[j * k + p] = bd[p * n + j];
                    }
                }
                let da = matmul_raw(grad, &bt, m, n, k);
                sink(a, &da);
            }
            if b.requires_grad() {
                // dB = A^T . g
                let ad = a.data();
                let mut at = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        at[p * m + i] = ad[i * k + p];
                    }
                }
                let db = matmul_raw(&at, grad, k, m, n);
                sink(b, &db);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut g = vec![0.0; r * c];
            for j in 0..c {
                for i in 0..r {
                    g[i * c + j] = grad[j * r + i];
                }
            }
            sink(a, &g);
        }
        Op::AddRowBias(a, bias) => {
            sink(a, grad);
            if bias.requires_grad() {
                let m = bias.numel();
                let mut g = vec![0.0; m];
                for row in grad.chunks_exact(m) {
                    for (gv, rv) in g.iter_mut().zip(row) {
                        *gv += rv;
                    }
                }
                sink(bias, &g);
            }
        }
        Op::AddChannelBias(a, bias) => {
            sink(a, grad);
            if bias.requires_grad() {
                let [n, c, h, w] = *a.shape() else { unreachable!() };
                let plane = h * w;
                let mut g = vec![0.0; c];
                for ni in 0..n {
                    for (ci, gv) in g.iter_mut().enumerate() {
                        let base = (ni * c + ci) * plane;
                        *gv += grad[base..base + plane].iter().sum::<f64>();
                    }
                }
                sink(bias, &g);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let [n, cin, h, w] = *input.shape() else { unreachable!() };
            let [cout, _, kh, kw] = *kernel.shape() else { unreachable!() };
            let d = ConvDims {
                n,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                ho: (h + 2 * padding - kh) / stride + 1,
                wo: (w + 2 * padding - kw) / stride + 1,
                stride: *stride,
                padding: *padding,
            };
            if input.requires_grad() {
                let g = conv2d_input_grad(grad, kernel.data(), d);
                sink(input, &g);
            }
            if kernel.requires_grad() {
                let g = conv2d_kernel_grad(grad, input.data(), d);
                sink(kernel, &g);
            }
        }
        Op::MaxPool2d { input, argmax } => {
            let mut g = vec![0.0; input.numel()];
            for (gv, &src) in grad.iter().zip(argmax) {
                g[src] += gv;
            }
            sink(input, &g);
        }
        Op::Relu(a) => {
            let g: Vec<f64> = grad
                .iter()
                .zip(a.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            sink(a, &g);
        }
        Op::Tanh(a) => {
            let g: Vec<f64> = grad
                .iter()
                .zip(out_data)
                .map(|(g, t)| g * (1.0 - t * t))
                .collect();
            sink(a, &g);
        }
        Op::Log(a) => {
            let g: Vec<f64> = grad.iter().zip(a.data()).map(|(g, x)| g / x).collect();
            sink(a, &g);
        }
        Op::Exp(a) => {
            let g: Vec<f64> = grad.iter().zip(out_data).map(|(g, e)| g * e).collect();
            sink(a, &g);
        }
        Op::Clamp { input, lo, hi } => {
            let g: Vec<f64> = grad
                .iter()
                .zip(input.data())
                .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                .collect();
            sink(input, &g);
        }
        Op::Sum(a) => {
            let g = vec![grad[0]; a.numel()];
            sink(a, &g);
        }
        Op::Mean(a) => {
            let g = vec![grad[0] / a.numel() as f64; a.numel()];
            sink(a, &g);
        }
        Op::RowSum(a) => {
            let k = a.shape()[1];
            let mut g = vec![0.0; a.numel()];
            for (i, row) in g.chunks_exact_mut(k).enumerate() {
                row.fill(grad[i]);
            }
            sink(a, &g);
        }
        Op::Gather { input, indices } => {
            let k = input.shape()[1];
            let mut g = vec![0.0; input.numel()];
            for (i, &j) in indices.iter().enumerate() {
                g[i * k + j] = grad[i];
            }
            sink(input, &g);
        }
        Op::MaskIndex { input, indices } => {
            let k = input.shape()[1];
            let mut g = grad.to_vec();
            for (i, &j) in indices.iter().enumerate() {
                g[i * k + j] = 0.0;
            }
            sink(input, &g);
        }
        Op::DivColumn { numer, denom } => {
            let k = numer.shape()[1];
            let d = denom.data();
            if numer.requires_grad() {
                let mut g = grad.to_vec();
                for (i, row) in g.chunks_exact_mut(k).enumerate() {
                    for x in row.iter_mut() {
                        *x /= d[i];
                    }
                }
                sink(numer, &g);
            }
            if denom.requires_grad() {
                let nd = numer.data();
                let mut g = vec![0.0; d.len()];
                for (i, gv) in g.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += grad[i * k + j] * nd[i * k + j];
                    }
                    *gv = -acc / (d[i] * d[i]);
                }
                sink(denom, &g);
            }
        }
        Op::RowMaxExcept { input, argmax } => {
            let mut g = vec![0.0; input.numel()];
            for (i, &src) in argmax.iter().enumerate() {
                g[src] += grad[i];
            }
            sink(input, &g);
        }
        Op::MaxScalar(a, floor) => {
            let g: Vec<f64> = grad
                .iter()
                .zip(a.data())
                .map(|(g, x)| if *x > *floor { *g } else { 0.0 })
                .collect();
            sink(a, &g);
        }
        Op::WhereMask {
            mask,
            on_true,
            on_false,
        } => {
            if on_true.requires_grad() {
                let g: Vec<f64> = grad
                    .iter()
                    .zip(mask)
                    .map(|(g, &m)| if m { *g } else { 0.0 })
                    .collect();
                sink(on_true, &g);
            }
            if on_false.requires_grad() {
                let g: Vec<f64> = grad
                    .iter()
                    .zip(mask)
                    .map(|(g, &m)| if m { 0.0 } else { *g })
                    .collect();
                sink(on_false, &g);
            }
        }
        Op::Reshape(a) => sink(a, grad),
        Op::Softmax(a) => {
            let k = a.shape()[1];
            let mut g = vec![0.0; a.numel()];
            for (i, row) in g.chunks_exact_mut(k).enumerate() {
                let p = &out_data[i * k..(i + 1) * k];
                let gr = &grad[i * k..(i + 1) * k];
                let dot: f64 = gr.iter().zip(p).map(|(g, p)| g * p).sum();
                for ((dst, &pv), &gv) in row.iter_mut().zip(p).zip(gr) {
                    *dst = pv * (gv - dot);
                }
            }
            sink(a, &g);
        }
    }
}
