//! Forward kernels and backward rules for every primitive the tape records.

use std::sync::Arc;

use super::{NdError, Tensor};

/// Primitive operation kinds. Attributes travel inside the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[.., k] x [k, n]` with a shared right operand, or batched
    /// `[B.., m, k] x [B.., k, n]` when both operands have rank >= 3.
    ///
    /// With `order_invariant` set, each dot product sums its terms in sorted
    /// order so the result does not depend on the order of the contracted axis.
    MatMul { order_invariant: bool },
    /// Elementwise; the right operand may also match a suffix of the left shape.
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Exp,
    Log,
    Tanh,
    /// `[x, slope]` where slope holds a single value.
    Prelu,
    /// Max over consecutive groups of `window` along the last axis.
    MaxPoolChannel { window: usize },
    /// Sum of every element, producing a rank-0 tensor.
    ReduceSum,
    CumsumTime { axis: usize },
    /// `x [T, n, c_in]`, `w [k, c_in, c_out]`, optional `bias [c_out]`.
    /// Zero padded symmetrically so the output keeps length `T`.
    ConvTemporal,
    /// `x [t_in, n, c]`, `w [t_out, t_in, k]`, optional `bias [t_out]`.
    /// Time steps act as channels; the kernel slides along the feature axis.
    ConvChannelTime,
    Concat { axis: usize },
    Reshape { shape: Vec<usize> },
    /// Replace entries where `mask` is set with `value`; no gradient flows there.
    MaskedFill { mask: Arc<[bool]>, value: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::ScalarMul(_) => "scalar-mul",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Tanh => "tanh",
            Primitive::Prelu => "prelu",
            Primitive::MaxPoolChannel { .. } => "max-pool-channel",
            Primitive::ReduceSum => "reduce-sum",
            Primitive::CumsumTime { .. } => "cumsum-time",
            Primitive::ConvTemporal => "conv-temporal",
            Primitive::ConvChannelTime => "conv-channel-time",
            Primitive::Concat { .. } => "concat",
            Primitive::Reshape { .. } => "reshape",
            Primitive::MaskedFill { .. } => "masked-fill",
        }
    }
}

pub(crate) struct Forward {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Max-pool winners, indexed by output element.
    pub argmax: Option<Vec<usize>>,
}

impl Forward {
    fn plain(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data, argmax: None }
    }
}

fn shape_err(prim: &Primitive, detail: String) -> NdError {
    NdError::Shape { kind: prim.name(), detail }
}

fn arity(prim: &Primitive, inputs: &[&Tensor], allowed: &[usize]) -> Result<(), NdError> {
    if allowed.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(shape_err(prim, format!("expected {:?} inputs, got {}", allowed, inputs.len())))
    }
}

fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

/// Layout of a matmul: `batch` independent products of `[m, k] x [k, n]`,
/// with the right operand shared across batches when `shared_rhs`.
struct MatLayout {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    out_shape: Vec<usize>,
}

fn mat_layout(prim: &Primitive, a: &[usize], b: &[usize]) -> Result<MatLayout, NdError> {
    if b.len() == 2 {
        let (k, n) = (b[0], b[1]);
        if a.is_empty() || a[a.len() - 1] != k {
            return Err(shape_err(prim, format!("lhs {:?} cannot contract with rhs {:?}", a, b)));
        }
        let rows = a[..a.len() - 1].iter().product();
        let mut out_shape = a[..a.len() - 1].to_vec();
        out_shape.push(n);
        return Ok(MatLayout { batch: 1, m: rows, k, n, shared_rhs: true, out_shape });
    }
    let r = b.len();
    if r < 3 || a.len() != r || a[..r - 2] != b[..r - 2] || a[r - 1] != b[r - 2] {
        return Err(shape_err(prim, format!("lhs {:?} incompatible with rhs {:?}", a, b)));
    }
    let mut out_shape = a[..r - 1].to_vec();
    out_shape.push(b[r - 1]);
    Ok(MatLayout {
        batch: a[..r - 2].iter().product(),
        m: a[r - 2],
        k: a[r - 1],
        n: b[r - 1],
        shared_rhs: false,
        out_shape,
    })
}

fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(|x, y| x.total_cmp(y));
    terms.iter().sum()
}

fn conv_pad(prim: &Primitive, k: usize) -> Result<usize, NdError> {
    if k % 2 == 0 {
        return Err(shape_err(prim, format!("kernel size {k} must be odd")));
    }
    Ok((k - 1) / 2)
}

/// Offset of `i` shifted by `delta - pad`, if it stays inside `0..len`.
#[inline]
fn tap(i: usize, delta: usize, pad: usize, len: usize) -> Option<usize> {
    let s = i + delta;
    if s < pad || s - pad >= len {
        None
    } else {
        Some(s - pad)
    }
}

pub(crate) fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<Forward, NdError> {
    match prim {
        Primitive::MatMul { order_invariant } => {
            arity(prim, inputs, &[2])?;
            let (a, b) = (inputs[0].data(), inputs[1].data());
            let l = mat_layout(prim, inputs[0].shape(), inputs[1].shape())?;
            let mut out = vec![0.0; l.batch * l.m * l.n];
            let mut scratch = vec![0.0; l.k];
            for bi in 0..l.batch {
                let a_off = bi * l.m * l.k;
                let b_off = if l.shared_rhs { 0 } else { bi * l.k * l.n };
                let o_off = bi * l.m * l.n;
                for r in 0..l.m {
                    let arow = &a[a_off + r * l.k..a_off + (r + 1) * l.k];
                    let orow = &mut out[o_off + r * l.n..o_off + (r + 1) * l.n];
                    if *order_invariant {
                        for (j, o) in orow.iter_mut().enumerate() {
                            for (p, s) in scratch.iter_mut().enumerate() {
                                *s = arow[p] * b[b_off + p * l.n + j];
                            }
                            *o = sorted_sum(&mut scratch);
                        }
                    } else {
                        for (p, &av) in arow.iter().enumerate() {
                            let brow = &b[b_off + p * l.n..b_off + (p + 1) * l.n];
                            for (o, &bv) in orow.iter_mut().zip(brow) {
                                *o += av * bv;
                            }
                        }
                    }
                }
            }
            Ok(Forward::plain(l.out_shape, out))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            arity(prim, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            if !is_suffix(a.shape(), b.shape()) || b.is_empty() {
                return Err(shape_err(prim, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let inner = b.len();
            let bd = b.data();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = bd[i % inner];
                    match prim {
                        Primitive::Add => x + y,
                        Primitive::Sub => x - y,
                        _ => x * y,
                    }
                })
                .collect();
            Ok(Forward::plain(a.shape().to_vec(), data))
        }
        Primitive::ScalarMul(c) => {
            arity(prim, inputs, &[1])?;
            Ok(Forward::plain(inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| x * c).collect()))
        }
        Primitive::Exp | Primitive::Log | Primitive::Tanh => {
            arity(prim, inputs, &[1])?;
            let f: fn(f64) -> f64 = match prim {
                Primitive::Exp => f64::exp,
                Primitive::Log => f64::ln,
                _ => f64::tanh,
            };
            Ok(Forward::plain(inputs[0].shape().to_vec(), inputs[0].data().iter().map(|&x| f(x)).collect()))
        }
        Primitive::Prelu => {
            arity(prim, inputs, &[2])?;
            if inputs[1].len() != 1 {
                return Err(shape_err(prim, format!("slope must hold one value, shape {:?}", inputs[1].shape())));
            }
            let a = inputs[1].data()[0];
            let data = inputs[0].data().iter().map(|&x| if x > 0.0 { x } else { a * x }).collect();
            Ok(Forward::plain(inputs[0].shape().to_vec(), data))
        }
        Primitive::MaxPoolChannel { window } => {
            arity(prim, inputs, &[1])?;
            let x = inputs[0];
            let c = *x.shape().last().unwrap_or(&0);
            if *window == 0 || x.rank() == 0 || c % window != 0 {
                return Err(shape_err(prim, format!("last axis of {:?} not divisible by window {}", x.shape(), window)));
            }
            let groups = x.len() / window;
            let mut data = Vec::with_capacity(groups);
            let mut argmax = Vec::with_capacity(groups);
            for g in 0..groups {
                let base = g * window;
                let mut best = base;
                for idx in base + 1..base + window {
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                data.push(x.data()[best]);
                argmax.push(best);
            }
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = c / window;
            Ok(Forward { shape, data, argmax: Some(argmax) })
        }
        Primitive::ReduceSum => {
            arity(prim, inputs, &[1])?;
            Ok(Forward::plain(Vec::new(), vec![inputs[0].data().iter().sum()]))
        }
        Primitive::CumsumTime { axis } => {
            arity(prim, inputs, &[1])?;
            let x = inputs[0];
            if *axis >= x.rank() {
                return Err(shape_err(prim, format!("axis {} out of range for {:?}", axis, x.shape())));
            }
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let mut data = x.data().to_vec();
            for o in 0..outer {
                for t in 1..len {
                    for i in 0..inner {
                        let cur = (o * len + t) * inner + i;
                        data[cur] += data[cur - inner];
                    }
                }
            }
            Ok(Forward::plain(x.shape().to_vec(), data))
        }
        Primitive::ConvTemporal => {
            arity(prim, inputs, &[2, 3])?;
            let (x, w) = (inputs[0], inputs[1]);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[2] {
                return Err(shape_err(prim, format!("input {:?} kernel {:?}", xs, ws)));
            }
            let (t_len, n, c_in, k, c_out) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
            let pad = conv_pad(prim, k)?;
            let mut out = vec![0.0; t_len * n * c_out];
            if let Some(bias) = inputs.get(2) {
                if bias.shape() != [c_out] {
                    return Err(shape_err(prim, format!("bias {:?} for {} output channels", bias.shape(), c_out)));
                }
                for (o, v) in out.iter_mut().enumerate() {
                    *v = bias.data()[o % c_out];
                }
            }
            let (xd, wd) = (x.data(), w.data());
            for t in 0..t_len {
                for kk in 0..k {
                    let Some(s) = tap(t, kk, pad, t_len) else { continue };
                    for i in 0..n {
                        let xrow = &xd[(s * n + i) * c_in..(s * n + i + 1) * c_in];
                        let orow = &mut out[(t * n + i) * c_out..(t * n + i + 1) * c_out];
                        for (c, &xv) in xrow.iter().enumerate() {
                            let wrow = &wd[(kk * c_in + c) * c_out..(kk * c_in + c + 1) * c_out];
                            for (o, &wv) in orow.iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
            Ok(Forward::plain(vec![t_len, n, c_out], out))
        }
        Primitive::ConvChannelTime => {
            arity(prim, inputs, &[2, 3])?;
            let (x, w) = (inputs[0], inputs[1]);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[0] {
                return Err(shape_err(prim, format!("input {:?} kernel {:?}", xs, ws)));
            }
            let (t_in, n, c, t_out, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
            let pad = conv_pad(prim, k)?;
            let mut out = vec![0.0; t_out * n * c];
            if let Some(bias) = inputs.get(2) {
                if bias.shape() != [t_out] {
                    return Err(shape_err(prim, format!("bias {:?} for {} output steps", bias.shape(), t_out)));
                }
                for (idx, v) in out.iter_mut().enumerate() {
                    *v = bias.data()[idx / (n * c)];
                }
            }
            let (xd, wd) = (x.data(), w.data());
            for to in 0..t_out {
                for ti in 0..t_in {
                    for kk in 0..k {
                        let wv = wd[(to * t_in + ti) * k + kk];
                        for i in 0..n {
                            let xrow = &xd[(ti * n + i) * c..(ti * n + i + 1) * c];
                            let orow = &mut out[(to * n + i) * c..(to * n + i + 1) * c];
                            for (ch, o) in orow.iter_mut().enumerate() {
                                if let Some(src) = tap(ch, kk, pad, c) {
                                    *o += wv * xrow[src];
                                }
                            }
                        }
                    }
                }
            }
            Ok(Forward::plain(vec![t_out, n, c], out))
        }
        Primitive::Concat { axis } => {
            if inputs.is_empty() {
                return Err(shape_err(prim, "no inputs".into()));
            }
            let first = inputs[0].shape();
            if *axis >= first.len() {
                return Err(shape_err(prim, format!("axis {} out of range for {:?}", axis, first)));
            }
            let mut total = 0;
            for x in inputs {
                let s = x.shape();
                let ok = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(d, (a, b))| d == *axis || a == b);
                if !ok {
                    return Err(shape_err(prim, format!("{:?} vs {:?} along axis {}", s, first, axis)));
                }
                total += s[*axis];
            }
            let outer: usize = first[..*axis].iter().product();
            let inner: usize = first[*axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for x in inputs {
                    let chunk = x.shape()[*axis] * inner;
                    data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[*axis] = total;
            Ok(Forward::plain(shape, data))
        }
        Primitive::Reshape { shape } => {
            arity(prim, inputs, &[1])?;
            if shape.iter().product::<usize>() != inputs[0].len() {
                return Err(shape_err(prim, format!("{:?} -> {:?}", inputs[0].shape(), shape)));
            }
            Ok(Forward::plain(shape.clone(), inputs[0].data().to_vec()))
        }
        Primitive::MaskedFill { mask, value } => {
            arity(prim, inputs, &[1])?;
            if mask.len() != inputs[0].len() {
                return Err(shape_err(prim, format!("mask of {} for {:?}", mask.len(), inputs[0].shape())));
            }
            let data = inputs[0].data().iter().zip(mask.iter()).map(|(&x, &m)| if m { *value } else { x }).collect();
            Ok(Forward::plain(inputs[0].shape().to_vec(), data))
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Vector-Jacobian products for each input. `needs[i]` false skips input `i`.
pub(crate) fn backward(
    prim: &Primitive,
    inputs: &[Tensor],
    out: &[f64],
    argmax: Option<&[usize]>,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match prim {
        Primitive::MatMul { .. } => {
            let l = mat_layout(prim, inputs[0].shape(), inputs[1].shape()).expect("validated in forward");
            let (a, b) = (inputs[0].data(), inputs[1].data());
            if needs[0] {
                let mut ga = vec![0.0; a.len()];
                for bi in 0..l.batch {
                    let b_off = if l.shared_rhs { 0 } else { bi * l.k * l.n };
                    for r in 0..l.m {
                        let grow = &g[(bi * l.m + r) * l.n..(bi * l.m + r + 1) * l.n];
                        let garow = &mut ga[(bi * l.m + r) * l.k..(bi * l.m + r + 1) * l.k];
                        for (p, gav) in garow.iter_mut().enumerate() {
                            let brow = &b[b_off + p * l.n..b_off + (p + 1) * l.n];
                            *gav = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                }
                grads[0] = Some(ga);
            }
            if needs[1] {
                let mut gb = vec![0.0; b.len()];
                for bi in 0..l.batch {
                    let b_off = if l.shared_rhs { 0 } else { bi * l.k * l.n };
                    for r in 0..l.m {
                        let arow = &a[(bi * l.m + r) * l.k..(bi * l.m + r + 1) * l.k];
                        let grow = &g[(bi * l.m + r) * l.n..(bi * l.m + r + 1) * l.n];
                        for (p, &av) in arow.iter().enumerate() {
                            let gbrow = &mut gb[b_off + p * l.n..b_off + (p + 1) * l.n];
                            for (o, &gv) in gbrow.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
                grads[1] = Some(gb);
            }
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            let inner = inputs[1].len();
            let (a, b) = (inputs[0].data(), inputs[1].data());
            if needs[0] {
                grads[0] = Some(match prim {
                    Primitive::Mul => g.iter().enumerate().map(|(i, gv)| gv * b[i % inner]).collect(),
                    _ => g.to_vec(),
                });
            }
            if needs[1] {
                let mut gb = vec![0.0; inner];
                for (i, &gv) in g.iter().enumerate() {
                    gb[i % inner] += match prim {
                        Primitive::Add => gv,
                        Primitive::Sub => -gv,
                        _ => gv * a[i],
                    };
                }
                grads[1] = Some(gb);
            }
        }
        Primitive::ScalarMul(c) => grads[0] = Some(g.iter().map(|v| v * c).collect()),
        Primitive::Exp => grads[0] = Some(g.iter().zip(out).map(|(gv, y)| gv * y).collect()),
        Primitive::Log => grads[0] = Some(g.iter().zip(inputs[0].data()).map(|(gv, x)| gv / x).collect()),
        Primitive::Tanh => grads[0] = Some(g.iter().zip(out).map(|(gv, y)| gv * (1.0 - y * y)).collect()),
        Primitive::Prelu => {
            let x = inputs[0].data();
            let a = inputs[1].data()[0];
            if needs[0] {
                grads[0] = Some(g.iter().zip(x).map(|(&gv, &xv)| if xv > 0.0 { gv } else { a * gv }).collect());
            }
            if needs[1] {
                let ga: f64 = g.iter().zip(x).filter(|(_, &xv)| xv <= 0.0).map(|(gv, xv)| gv * xv).sum();
                grads[1] = Some(vec![ga]);
            }
        }
        Primitive::MaxPoolChannel { .. } => {
            let mut gx = vec![0.0; inputs[0].len()];
            for (&src, &gv) in argmax.expect("max-pool saves argmax").iter().zip(g) {
                gx[src] += gv;
            }
            grads[0] = Some(gx);
        }
        Primitive::ReduceSum => grads[0] = Some(vec![g[0]; inputs[0].len()]),
        Primitive::CumsumTime { axis } => {
            let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
            let mut gx = g.to_vec();
            for o in 0..outer {
                for t in (0..len.saturating_sub(1)).rev() {
                    for i in 0..inner {
                        let cur = (o * len + t) * inner + i;
                        gx[cur] += gx[cur + inner];
                    }
                }
            }
            grads[0] = Some(gx);
        }
        Primitive::ConvTemporal => {
            let (xs, ws) = (inputs[0].shape(), inputs[1].shape());
            let (t_len, n, c_in, k, c_out) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
            let pad = (k - 1) / 2;
            let (xd, wd) = (inputs[0].data(), inputs[1].data());
            let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
            let mut gw = needs[1].then(|| vec![0.0; wd.len()]);
            for t in 0..t_len {
                for kk in 0..k {
                    let Some(s) = tap(t, kk, pad, t_len) else { continue };
                    for i in 0..n {
                        let grow = &g[(t * n + i) * c_out..(t * n + i + 1) * c_out];
                        for c in 0..c_in {
                            let wbase = (kk * c_in + c) * c_out;
                            let xidx = (s * n + i) * c_in + c;
                            if let Some(gx) = gx.as_mut() {
                                gx[xidx] += grow.iter().zip(&wd[wbase..wbase + c_out]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(gw) = gw.as_mut() {
                                let xv = xd[xidx];
                                for (o, &gv) in gw[wbase..wbase + c_out].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            grads[0] = gx;
            grads[1] = gw;
            if inputs.len() == 3 && needs[2] {
                let mut gb = vec![0.0; c_out];
                for (idx, &gv) in g.iter().enumerate() {
                    gb[idx % c_out] += gv;
                }
                grads[2] = Some(gb);
            }
        }
        Primitive::ConvChannelTime => {
            let (xs, ws) = (inputs[0].shape(), inputs[1].shape());
            let (t_in, n, c, t_out, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
            let pad = (k - 1) / 2;
            let (xd, wd) = (inputs[0].data(), inputs[1].data());
            let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
            let mut gw = needs[1].then(|| vec![0.0; wd.len()]);
            for to in 0..t_out {
                for ti in 0..t_in {
                    for kk in 0..k {
                        let widx = (to * t_in + ti) * k + kk;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for i in 0..n {
                            let grow = &g[(to * n + i) * c..(to * n + i + 1) * c];
                            for (ch, &gv) in grow.iter().enumerate() {
                                if let Some(src) = tap(ch, kk, pad, c) {
                                    let xidx = (ti * n + i) * c + src;
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xidx] += wv * gv;
                                    }
                                    acc += xd[xidx] * gv;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
            grads[0] = gx;
            grads[1] = gw;
            if inputs.len() == 3 && needs[2] {
                let mut gb = vec![0.0; t_out];
                for (idx, &gv) in g.iter().enumerate() {
                    gb[idx / (n * c)] += gv;
                }
                grads[2] = Some(gb);
            }
        }
        Primitive::Concat { axis } => {
            let shape = inputs[0].shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis + 1..].iter().product();
            let total: usize = inputs.iter().map(|x| x.shape()[*axis]).sum();
            let mut offset = 0;
            for (slot, x) in inputs.iter().enumerate() {
                let chunk = x.shape()[*axis] * inner;
                if needs[slot] {
                    let mut gx = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        let start = o * total * inner + offset;
                        gx.extend_from_slice(&g[start..start + chunk]);
                    }
                    grads[slot] = Some(gx);
                }
                offset += chunk;
            }
        }
        Primitive::Reshape { .. } => grads[0] = Some(g.to_vec()),
        Primitive::MaskedFill { mask, .. } => {
            grads[0] = Some(g.iter().zip(mask.iter()).map(|(&gv, &m)| if m { 0.0 } else { gv }).collect());
        }
    }
    grads
}
