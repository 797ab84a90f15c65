//! Define-by-run reverse-mode record.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation pushes a
//! node holding its value and whatever it needs for the backward rule;
//! [`Graph::backward`] walks the nodes in reverse and accumulates gradients.

use super::params::{GradBuffer, ParamId, ParamStore};
use super::real::{gemm, Mat, Real};
use super::tensor::Tensor;
use crate::error::{BasenError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Stride, dilation and symmetric zero padding of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1 with the padding that keeps the frame count for odd `kernel`.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel - 1) / 2)
    }

    /// Output frames for `len` input frames and kernel size `kernel`.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        let span = self.dilation * (kernel.max(1) - 1) + 1;
        let padded = len + 2 * self.padding;
        if self.stride == 0 || self.dilation == 0 || padded < span {
            return Err(BasenError::shape(format!(
                "conv geometry gives no output: len={len} kernel={kernel} stride={} dilation={} padding={} (floor(({len} + {}) - {span})/{}) + 1 < 1)",
                self.stride,
                self.dilation,
                self.padding,
                2 * self.padding,
                self.stride
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

enum Op<S> {
    Input,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<S>>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        padding: usize,
    },
    PRelu {
        x: Var,
        slope: Var,
    },
    GroupNorm {
        x: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Softmax(Var),
    MatMul {
        a: Var,
        b: Var,
        b_transposed: bool,
    },
    Transpose(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sum(Var),
    Concat(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Interp {
        x: Var,
    },
    FitFrames {
        x: Var,
    },
    NegSiSdr {
        est: Var,
        grad: Vec<S>,
        /// Clamped low, clamped high, projection sign.
        piece: [bool; 3],
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Reverse-mode computation record.
pub struct Graph<'p, S: Real> {
    store: Option<&'p ParamStore<S>>,
    nodes: Vec<Node<S>>,
}

/// Frames `t` in `[lo, hi)` with `0 <= t*stride + off < len`.
fn valid_range(out_len: usize, len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let last = len as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let hi = (hi as usize).min(out_len);
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

/// `cols[(c*k + j), t] = x[c, t*stride + j*dilation - padding]`, zero outside.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Real>(x: &[S], channels: usize, len: usize, kernel: usize, geom: ConvGeom, out_len: usize) -> Vec<S> {
    let mut cols = vec![S::zero(); channels * kernel * out_len];
    for c in 0..channels {
        let xr = &x[c * len..(c + 1) * len];
        for j in 0..kernel {
            let off = (j * geom.dilation) as isize - geom.padding as isize;
            let (lo, hi) = valid_range(out_len, len, geom.stride, off);
            let row = &mut cols[(c * kernel + j) * out_len..(c * kernel + j + 1) * out_len];
            for t in lo..hi {
                row[t] = xr[(t as isize * geom.stride as isize + off) as usize];
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `x`.
fn col2im_add<S: Real>(cols: &[S], x: &mut [S], channels: usize, len: usize, kernel: usize, geom: ConvGeom, out_len: usize) {
    for c in 0..channels {
        let xr = &mut x[c * len..(c + 1) * len];
        for j in 0..kernel {
            let off = (j * geom.dilation) as isize - geom.padding as isize;
            let (lo, hi) = valid_range(out_len, len, geom.stride, off);
            let row = &cols[(c * kernel + j) * out_len..(c * kernel + j + 1) * out_len];
            for t in lo..hi {
                xr[(t as isize * geom.stride as isize + off) as usize] += row[t];
            }
        }
    }
}

fn add_row_bias<S: Real>(out: &mut [S], bias: &[S], cols: usize) {
    for (row, &b) in out.chunks_mut(cols).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn row_sums<S: Real>(g: &[S], cols: usize) -> Vec<S> {
    g.chunks(cols).map(|r| r.iter().copied().sum()).collect()
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Interpolation nodes: source index, next index, fraction.
fn interp_nodes(src: usize, dst: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    (0..dst).map(move |j| {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = (j * (src - 1)) as f64 / (dst - 1) as f64;
        let i0 = (pos.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, pos - i0 as f64)
    })
}

impl<'p, S: Real> Graph<'p, S> {
    pub fn new(store: &'p ParamStore<S>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
        }
    }

    /// A record with no parameter store; only inputs can be leaves.
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
        }
    }

    /// Sign of every PReLU input and the branch taken by every SI-SDR loss,
    /// in record order. Two evaluations with the same pattern lie on the
    /// same smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::PRelu { x, .. } => out.extend(self.value(*x).data().iter().map(|&v| v >= S::zero())),
                Op::NegSiSdr { piece, .. } => out.extend(piece),
                _ => {}
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("parameter leaf on a detached graph");
        let value = store.get(id).value().clone();
        self.push(value, Op::Param(id))
    }

    fn check_bias(&self, b: Option<Var>, n: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).len() != n {
                return Err(BasenError::shape(format!(
                    "bias has {} entries, expected {n}",
                    self.value(b).len()
                )));
            }
        }
        Ok(())
    }

    /// Cross-correlation of `x` (C_in x L) with `w` (C_out x C_in x K).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (cin, len) = self.dims2(x)?;
        let &[cout, wcin, k] = self.shape(w) else {
            return Err(BasenError::shape(format!("conv weight must be 3-D, got {:?}", self.shape(w))));
        };
        if wcin != cin {
            return Err(BasenError::shape(format!("conv expects {wcin} input channels, got {cin}")));
        }
        self.check_bias(b, cout)?;
        let out_len = geom.output_len(len, k)?;
        let pointwise = k == 1 && geom.stride == 1 && geom.padding == 0;
        let cols = (!pointwise).then(|| im2col(self.value(x).data(), cin, len, k, geom, out_len));
        let mut out = vec![S::zero(); cout * out_len];
        {
            let wm = Mat::new(self.value(w).data(), cout, cin * k);
            let cm = match &cols {
                Some(c) => Mat::new(c, cin * k, out_len),
                None => Mat::new(self.value(x).data(), cin, len),
            };
            gemm(wm, cm, &mut out, false);
        }
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b).data(), out_len);
        }
        let value = Tensor::new(vec![cout, out_len], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, geom, cols }))
    }

    /// Transposed convolution of `x` (C_in x L) with `w` (C_in x C_out x K).
    /// Output length is `(L-1)*stride + K - 2*padding`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (cin, len) = self.dims2(x)?;
        let &[wcin, cout, k] = self.shape(w) else {
            return Err(BasenError::shape(format!("transposed conv weight must be 3-D, got {:?}", self.shape(w))));
        };
        if wcin != cin {
            return Err(BasenError::shape(format!("transposed conv expects {wcin} input channels, got {cin}")));
        }
        self.check_bias(b, cout)?;
        if stride == 0 || len == 0 || (len - 1) * stride + k <= 2 * padding {
            return Err(BasenError::shape(format!(
                "transposed conv gives no output: len={len} kernel={k} stride={stride} padding={padding}"
            )));
        }
        let out_len = (len - 1) * stride + k - 2 * padding;
        let mut cols = vec![S::zero(); cout * k * len];
        gemm(
            Mat::new(self.value(w).data(), cin, cout * k).t(),
            Mat::new(self.value(x).data(), cin, len),
            &mut cols,
            false,
        );
        let mut out = vec![S::zero(); cout * out_len];
        col2im_add(&cols, &mut out, cout, out_len, k, ConvGeom::new(stride, 1, padding), len);
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b).data(), out_len);
        }
        let value = Tensor::new(vec![cout, out_len], out)?;
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, stride, padding }))
    }

    /// Per-channel convolution, `w` is C x 1 x K, stride 1.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize, padding: usize) -> Result<Var> {
        let (c, len) = self.dims2(x)?;
        let &[wc, 1, k] = self.shape(w) else {
            return Err(BasenError::shape(format!("depthwise weight must be C x 1 x K, got {:?}", self.shape(w))));
        };
        if wc != c {
            return Err(BasenError::shape(format!("depthwise conv expects {wc} channels, got {c}")));
        }
        self.check_bias(b, c)?;
        let geom = ConvGeom::new(1, dilation, padding);
        let out_len = geom.output_len(len, k)?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![S::zero(); c * out_len];
        for ch in 0..c {
            let xr = &xv[ch * len..(ch + 1) * len];
            let orow = &mut out[ch * out_len..(ch + 1) * out_len];
            for j in 0..k {
                let wj = wv[ch * k + j];
                let off = (j * dilation) as isize - padding as isize;
                let (lo, hi) = valid_range(out_len, len, 1, off);
                if lo == hi {
                    continue;
                }
                let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                orow[lo..hi].iter_mut().zip(src).for_each(|(o, &xv)| *o += wj * xv);
            }
        }
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b).data(), out_len);
        }
        let value = Tensor::new(vec![c, out_len], out)?;
        Ok(self.push(value, Op::Depthwise { x, w, b, dilation, padding }))
    }

    /// `x` where non-negative, `slope * x` elsewhere; `slope` holds one value.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(BasenError::shape("PReLU slope must be a single value"));
        }
        let a = self.value(slope).item();
        let v = self.value(x);
        let out = v.data().iter().map(|&x| if x >= S::zero() { x } else { a * x }).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(value, Op::PRelu { x, slope }))
    }

    /// Normalizes each group of `C/groups` channels over (channels, frames),
    /// then applies a per-channel affine map.
    pub fn group_norm(&mut self, x: Var, groups: usize, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (c, len) = self.dims2(x)?;
        if groups == 0 || c % groups != 0 {
            return Err(BasenError::shape(format!("{c} channels are not divisible into {groups} groups")));
        }
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(BasenError::shape("group norm affine parameters must have one entry per channel"));
        }
        let per = c / groups * len;
        let xv = self.value(x).data();
        let mut xhat = vec![S::zero(); c * len];
        let mut rstd = Vec::with_capacity(groups);
        for g in 0..groups {
            let seg = &xv[g * per..(g + 1) * per];
            let mean = seg.iter().map(|v| v.f64()).sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / per as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(S::of(r));
            for (o, &v) in xhat[g * per..(g + 1) * per].iter_mut().zip(seg) {
                *o = S::of((v.f64() - mean) * r);
            }
        }
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut out = xhat.clone();
        for (ch, row) in out.chunks_mut(len).enumerate() {
            row.iter_mut().for_each(|v| *v = *v * gv[ch] + bv[ch]);
        }
        let value = Tensor::new(vec![c, len], out)?;
        Ok(self.push(value, Op::GroupNorm { x, gain, bias, groups, xhat, rstd }))
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x)?;
        let v = self.value(x);
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                total += *e;
            }
            row.iter_mut().for_each(|e| *e /= total);
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (br, bc) = self.dims2(b)?;
        let (k2, n) = if b_transposed { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(BasenError::shape(format!("matmul inner dimensions differ: {k} vs {k2}")));
        }
        let mut out = vec![S::zero(); m * n];
        let bm = Mat::new(self.value(b).data(), br, bc);
        gemm(
            Mat::new(self.value(a).data(), m, k),
            if b_transposed { bm.t() } else { bm },
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, b_transposed }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a . b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let v = self.value(x).data();
        let out = (0..c * r).map(|i| v[(i % r) * c + i / r]).collect();
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = v.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out).expect("shape preserved");
        self.push(value, Op::Sigmoid(x))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(BasenError::shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = S::of(c);
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| e * c).collect()).expect("shape preserved");
        self.push(value, Op::Scale(x, c))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Stacks 2-D tensors with equal column counts along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.dims2(*parts.first().ok_or_else(|| BasenError::shape("nothing to concatenate"))?)?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if c != cols {
                return Err(BasenError::shape(format!("concat column mismatch: {c} vs {cols}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start + count > r {
            return Err(BasenError::shape(format!("rows {start}..{} out of {r}", start + count)));
        }
        let out = self.value(x).data()[start * c..(start + count) * c].to_vec();
        let value = Tensor::new(vec![count, c], out)?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Linear interpolation of every row to `len` frames; both endpoints map
    /// onto the source endpoints.
    pub fn interp_frames(&mut self, x: Var, len: usize) -> Result<Var> {
        let (r, src) = self.dims2(x)?;
        if src == 0 || len == 0 {
            return Err(BasenError::shape("cannot interpolate empty rows"));
        }
        let v = self.value(x);
        let mut out = vec![S::zero(); r * len];
        for (row, orow) in v.data().chunks(src).zip(out.chunks_mut(len)) {
            for (o, (i0, i1, f)) in orow.iter_mut().zip(interp_nodes(src, len)) {
                let f = S::of(f);
                *o = row[i0] + (row[i1] - row[i0]) * f;
            }
        }
        let value = Tensor::new(vec![r, len], out)?;
        Ok(self.push(value, Op::Interp { x }))
    }

    /// Crops or zero-pads every row at the end to `len` frames.
    pub fn fit_frames(&mut self, x: Var, len: usize) -> Result<Var> {
        let (r, src) = self.dims2(x)?;
        let v = self.value(x);
        let keep = src.min(len);
        let mut out = vec![S::zero(); r * len];
        for (row, orow) in v.data().chunks(src.max(1)).zip(out.chunks_mut(len.max(1))) {
            orow[..keep].copy_from_slice(&row[..keep]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        Ok(self.push(value, Op::FitFrames { x }))
    }

    /// Negative SI-SDR of `est` against a fixed `reference`, in dB. Values
    /// above `cap` dB (including a zero residual) clamp to `-cap`, values
    /// below `-cap` (including a silent estimate) to `cap`, both with zero
    /// gradient.
    pub fn neg_si_sdr(&mut self, est: Var, reference: &[S], cap: f64) -> Result<Var> {
        let e = self.value(est).data();
        if e.len() != reference.len() {
            return Err(BasenError::shape(format!(
                "estimate has {} samples, reference {}",
                e.len(),
                reference.len()
            )));
        }
        let terms = crate::train::sisdr::SiSdrTerms::compute(
            &e.iter().map(|v| v.f64()).collect::<Vec<_>>(),
            &reference.iter().map(|v| v.f64()).collect::<Vec<_>>(),
        )?;
        let db = terms.db();
        let piece = [db.is_nan() || db <= -cap, db >= cap, terms.dot >= 0.0];
        let (loss, grad) = if piece[0] {
            (cap, vec![S::zero(); e.len()])
        } else if piece[1] {
            (-cap, vec![S::zero(); e.len()])
        } else {
            // With x_res = x_target - est:
            // d/d est of 10 log10(|x_target|^2 / |x_res|^2) = (10/ln 10) (2 s / <est,s> + 2 x_res / |x_res|^2)
            let k = 10.0 / std::f64::consts::LN_10;
            let g = terms
                .residual
                .iter()
                .zip(reference)
                .map(|(&r, &s)| S::of(-k * (2.0 * s.f64() / terms.dot + 2.0 * r / terms.residual_energy)))
                .collect();
            (-db, g)
        };
        Ok(self.push(Tensor::scalar(S::of(loss)), Op::NegSiSdr { est, grad, piece }))
    }

    /// Gradients of the one-element `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        if self.value(root).len() != 1 {
            return Err(BasenError::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), S::one()));

        fn acc<S: Real>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        let like = |v: Var, data: Vec<S>| Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape");

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let gd = g.data();
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv1d { x, w, b, geom, cols } => {
                    let (cin, len) = self.value(*x).dims2()?;
                    let &[cout, _, k] = self.shape(*w) else { unreachable!() };
                    let out_len = node.value.shape()[1];
                    let gm = Mat::new(gd, cout, out_len);
                    let mut dw = vec![S::zero(); cout * cin * k];
                    let cm = match cols {
                        Some(c) => Mat::new(c, cin * k, out_len),
                        None => Mat::new(self.value(*x).data(), cin, len),
                    };
                    gemm(gm, cm.t(), &mut dw, false);
                    let wm = Mat::new(self.value(*w).data(), cout, cin * k);
                    let dx = if cols.is_some() {
                        let mut dcols = vec![S::zero(); cin * k * out_len];
                        gemm(wm.t(), gm, &mut dcols, false);
                        let mut dx = vec![S::zero(); cin * len];
                        col2im_add(&dcols, &mut dx, cin, len, k, *geom, out_len);
                        dx
                    } else {
                        let mut dx = vec![S::zero(); cin * len];
                        gemm(wm.t(), gm, &mut dx, false);
                        dx
                    };
                    if let Some(b) = b {
                        acc(&mut grads, *b, like(*b, row_sums(gd, out_len)));
                    }
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::ConvTranspose1d { x, w, b, stride, padding } => {
                    let (cin, len) = self.value(*x).dims2()?;
                    let &[_, cout, k] = self.shape(*w) else { unreachable!() };
                    let out_len = node.value.shape()[1];
                    let dcols = im2col(gd, cout, out_len, k, ConvGeom::new(*stride, 1, *padding), len);
                    let dm = Mat::new(&dcols, cout * k, len);
                    let mut dx = vec![S::zero(); cin * len];
                    gemm(Mat::new(self.value(*w).data(), cin, cout * k), dm, &mut dx, false);
                    let mut dw = vec![S::zero(); cin * cout * k];
                    gemm(Mat::new(self.value(*x).data(), cin, len), dm.t(), &mut dw, false);
                    if let Some(b) = b {
                        acc(&mut grads, *b, like(*b, row_sums(gd, out_len)));
                    }
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Depthwise { x, w, b, dilation, padding } => {
                    let (c, len) = self.value(*x).dims2()?;
                    let k = self.shape(*w)[2];
                    let out_len = node.value.shape()[1];
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    let mut dx = vec![S::zero(); c * len];
                    let mut dw = vec![S::zero(); c * k];
                    for ch in 0..c {
                        let grow = &gd[ch * out_len..(ch + 1) * out_len];
                        for j in 0..k {
                            let off = (j * dilation) as isize - *padding as isize;
                            let (lo, hi) = valid_range(out_len, len, 1, off);
                            if lo == hi {
                                continue;
                            }
                            let s = (lo as isize + off) as usize + ch * len;
                            let e = (hi as isize + off) as usize + ch * len;
                            let wj = wv[ch * k + j];
                            let mut dwj = S::zero();
                            for ((dxv, &xv), &gv) in dx[s..e].iter_mut().zip(&xv[s..e]).zip(&grow[lo..hi]) {
                                *dxv += wj * gv;
                                dwj += gv * xv;
                            }
                            dw[ch * k + j] = dwj;
                        }
                    }
                    if let Some(b) = b {
                        acc(&mut grads, *b, like(*b, row_sums(gd, out_len)));
                    }
                    acc(&mut grads, *w, like(*w, dw));
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::PRelu { x, slope } => {
                    let a = self.value(*slope).item();
                    let xv = self.value(*x).data();
                    let mut da = S::zero();
                    let dx = xv
                        .iter()
                        .zip(gd)
                        .map(|(&x, &g)| {
                            if x >= S::zero() {
                                g
                            } else {
                                da += g * x;
                                a * g
                            }
                        })
                        .collect();
                    acc(&mut grads, *slope, Tensor::scalar(da));
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::GroupNorm { x, gain, bias, groups, xhat, rstd } => {
                    let (c, len) = self.value(*x).dims2()?;
                    let gv = self.value(*gain).data();
                    let per = c / groups * len;
                    let mut dgain = vec![S::zero(); c];
                    let mut dbias = vec![S::zero(); c];
                    let mut dxhat = vec![S::zero(); c * len];
                    for ch in 0..c {
                        let r = ch * len..(ch + 1) * len;
                        let mut sg = 0.0;
                        let mut sb = 0.0;
                        for ((d, &g), &xh) in dxhat[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                            *d = g * gv[ch];
                            sg += (g * xh).f64();
                            sb += g.f64();
                        }
                        dgain[ch] = S::of(sg);
                        dbias[ch] = S::of(sb);
                    }
                    let mut dx = vec![S::zero(); c * len];
                    for (grp, &rstd_g) in rstd.iter().enumerate().take(*groups) {
                        let r = grp * per..(grp + 1) * per;
                        let (sum_d, sum_dx) = dxhat[r.clone()]
                            .iter()
                            .zip(&xhat[r.clone()])
                            .fold((0.0, 0.0), |(a, b), (&d, &xh)| (a + d.f64(), b + (d * xh).f64()));
                        let n = per as f64;
                        let rs = rstd_g.f64();
                        for ((o, &d), &xh) in dx[r.clone()].iter_mut().zip(&dxhat[r.clone()]).zip(&xhat[r]) {
                            *o = S::of(rs / n * (n * d.f64() - sum_d - xh.f64() * sum_dx));
                        }
                    }
                    acc(&mut grads, *gain, like(*gain, dgain));
                    acc(&mut grads, *bias, like(*bias, dbias));
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Softmax(x) => {
                    let cols = node.value.shape()[1];
                    let mut dx = vec![S::zero(); gd.len()];
                    for ((o, y), g) in dx.chunks_mut(cols).zip(node.value.data().chunks(cols)).zip(gd.chunks(cols)) {
                        let dot: S = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in o.iter_mut().zip(y).zip(g) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::MatMul { a, b, b_transposed } => {
                    let (m, k) = self.value(*a).dims2()?;
                    let (br, bc) = self.value(*b).dims2()?;
                    let n = node.value.shape()[1];
                    let gm = Mat::new(gd, m, n);
                    let bm = Mat::new(self.value(*b).data(), br, bc);
                    let am = Mat::new(self.value(*a).data(), m, k);
                    let mut da = vec![S::zero(); m * k];
                    let mut db = vec![S::zero(); br * bc];
                    if *b_transposed {
                        // out = a b^T: da = g b, db = g^T a
                        gemm(gm, bm, &mut da, false);
                        gemm(gm.t(), am, &mut db, false);
                    } else {
                        gemm(gm, bm.t(), &mut da, false);
                        gemm(am.t(), gm, &mut db, false);
                    }
                    acc(&mut grads, *a, like(*a, da));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::Transpose(x) => {
                    let (r, c) = self.value(*x).dims2()?;
                    let dx = (0..r * c).map(|i| gd[(i % c) * r + i / c]).collect();
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Sigmoid(x) => {
                    let dx = node.value.data().iter().zip(gd).map(|(&y, &g)| g * y * (S::one() - y)).collect();
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = gd.iter().zip(bv).map(|(&g, &b)| g * b).collect();
                    let db = gd.iter().zip(av).map(|(&g, &a)| g * a).collect();
                    acc(&mut grads, *a, like(*a, da));
                    acc(&mut grads, *b, like(*b, db));
                }
                Op::Scale(x, c) => {
                    acc(&mut grads, *x, like(*x, gd.iter().map(|&g| g * *c).collect()));
                }
                Op::Sum(x) => {
                    acc(&mut grads, *x, Tensor::full(self.shape(*x), gd[0]));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        acc(&mut grads, p, like(p, gd[offset..offset + n].to_vec()));
                        offset += n;
                    }
                }
                Op::SliceRows { x, start } => {
                    let cols = node.value.shape()[1];
                    let mut dx = vec![S::zero(); self.value(*x).len()];
                    dx[start * cols..start * cols + gd.len()].copy_from_slice(gd);
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::Interp { x } => {
                    let (r, src) = self.value(*x).dims2()?;
                    let len = node.value.shape()[1];
                    let mut dx = vec![S::zero(); r * src];
                    for (drow, grow) in dx.chunks_mut(src).zip(gd.chunks(len)) {
                        for (&gv, (i0, i1, f)) in grow.iter().zip(interp_nodes(src, len)) {
                            let f = S::of(f);
                            drow[i0] += gv * (S::one() - f);
                            drow[i1] += gv * f;
                        }
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::FitFrames { x } => {
                    let (r, src) = self.value(*x).dims2()?;
                    let len = node.value.shape()[1];
                    let keep = src.min(len);
                    let mut dx = vec![S::zero(); r * src];
                    for ch in 0..r {
                        dx[ch * src..ch * src + keep].copy_from_slice(&gd[ch * len..ch * len + keep]);
                    }
                    acc(&mut grads, *x, like(*x, dx));
                }
                Op::NegSiSdr { est, grad, .. } => {
                    let dx = grad.iter().map(|&v| v * gd[0]).collect();
                    acc(&mut grads, *est, like(*est, dx));
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: Vec<(usize, ParamId)>,
}

impl<S: Real> Gradients<S> {
    /// Gradient reaching a leaf (input or parameter node), if any.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    /// Adds every parameter-leaf gradient into `buffer`.
    pub fn accumulate(&self, buffer: &mut GradBuffer<S>) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                buffer.add(id, g);
            }
        }
    }

    /// Adds every parameter-leaf gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<S>) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad_mut().add_assign(g);
            }
        }
    }
}
