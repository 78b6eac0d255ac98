//! Forward implementations. Each op validates shapes, computes eagerly,
//! checks the output for finiteness, and tapes itself when gradients can
//! flow to it.

use super::*;

/// Broadcast rule: equal rank; per axis the extents match or one side is 1.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(TensorError::Dimension {
            op,
            detail: format!("rank mismatch: {:?} vs {:?}", a, b),
        });
    }
    let mut out = Vec::with_capacity(a.len());
    for (&ea, &eb) in a.iter().zip(b) {
        if ea == eb || ea == 1 || eb == 1 {
            out.push(ea.max(eb));
        } else {
            return Err(TensorError::Dimension {
                op,
                detail: format!("incompatible shapes {:?} vs {:?}", a, b),
            });
        }
    }
    Ok(out)
}

/// Effective strides for indexing `shape` as if broadcast to `out_shape`
/// (stride 0 on singleton axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    shape
        .iter()
        .zip(out_shape)
        .zip(st)
        .map(|((&e, &o), s)| if e == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Maps a linear index in `out_shape` to a linear index under `eff` strides.
#[inline]
pub(crate) fn map_index(mut lin: usize, out_strides: &[usize], eff: &[usize]) -> usize {
    let mut idx = 0;
    for (os, e) in out_strides.iter().zip(eff) {
        let c = lin / os;
        lin -= c * os;
        idx += c * e;
    }
    idx
}

/// Outer/mid/inner decomposition around `axis` for slice-wise loops.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

/// Source taps and weight for 1-d bilinear resampling with half-pixel
/// centers; same-size resampling is exactly the identity.
pub(crate) fn lerp_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Last-two-axes view used by the pooling and resize ops.
pub(crate) fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((1, shape[0], shape[1])),
        3 => Ok((shape[0], shape[1], shape[2])),
        _ => Err(TensorError::Dimension {
            op,
            detail: format!("expected rank 2 or 3, got {:?}", shape),
        }),
    }
}

impl Graph {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name: &'static str = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        if kind == BinaryKind::Div && self.data(b).iter().any(|&v| v == 0.0) {
            return Err(TensorError::Domain { op: "div", detail: "division by zero".into() });
        }
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let n = numel(&out_shape);
        let mut data = Vec::with_capacity(n);
        let (da, db) = (self.data(a), self.data(b));
        if self.shape(a) == out_shape.as_slice() && self.shape(b) == out_shape.as_slice() {
            data.extend(da.iter().zip(db).map(|(&x, &y)| f(x, y)));
        } else {
            let os = strides(&out_shape);
            let ea = broadcast_strides(self.shape(a), &out_shape);
            let eb = broadcast_strides(self.shape(b), &out_shape);
            for lin in 0..n {
                let ia = map_index(lin, &os, &ea);
                let ib = map_index(lin, &os, &eb);
                data.push(f(da[ia], db[ib]));
            }
        }
        check_finite(name, &data)?;
        let rg = self.out_requires(&[a, b]);
        let out = self.push(out_shape, data, rg);
        self.record(Op::Binary { kind, a, b }, out);
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let name: &'static str = match kind {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Log => "log",
            UnaryKind::Exp => "exp",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Relu => "relu",
        };
        let xd = self.data(x);
        match kind {
            UnaryKind::Log if xd.iter().any(|&v| v <= 0.0) => {
                return Err(TensorError::Domain { op: "log", detail: "log of non-positive value".into() });
            }
            UnaryKind::Sqrt if xd.iter().any(|&v| v < 0.0) => {
                return Err(TensorError::Domain { op: "sqrt", detail: "sqrt of negative value".into() });
            }
            _ => {}
        }
        let data: Vec<f64> = xd
            .iter()
            .map(|&v| match kind {
                UnaryKind::Sigmoid => stable_sigmoid(v),
                UnaryKind::Log => v.ln(),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Sqrt => v.sqrt(),
                UnaryKind::Relu => v.max(0.0),
            })
            .collect();
        check_finite(name, &data)?;
        let rg = self.out_requires(&[x]);
        let shape = self.shape(x).to_vec();
        let out = self.push(shape, data, rg);
        self.record(Op::Unary { kind, x }, out);
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(TensorError::Domain {
                op: "clamp",
                detail: format!("invalid bounds [{lo}, {hi}]"),
            });
        }
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.clamp(lo, hi)).collect();
        let rg = self.out_requires(&[x]);
        let shape = self.shape(x).to_vec();
        let out = self.push(shape, data, rg);
        self.record(Op::Clamp { x, lo, hi }, out);
        Ok(out)
    }

    fn affine(&mut self, x: Var, mul: f64, add: f64) -> Result<Var> {
        if !mul.is_finite() || !add.is_finite() {
            return Err(TensorError::Domain { op: "affine", detail: "non-finite constant".into() });
        }
        let data: Vec<f64> = self.data(x).iter().map(|&v| v * mul + add).collect();
        check_finite("affine", &data)?;
        let rg = self.out_requires(&[x]);
        let shape = self.shape(x).to_vec();
        let out = self.push(shape, data, rg);
        self.record(Op::Affine { x, mul }, out);
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, 1.0, c)
    }

    /// out = c - x, handy for `1 - mask` style expressions.
    pub fn rsub_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, -1.0, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Dimension {
                op: "matmul",
                detail: format!("cannot multiply {:?} by {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &da[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (kk, &aik) in row.iter().enumerate() {
                let brow = &db[kk * n..(kk + 1) * n];
                for (o, &bkj) in out_row.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        check_finite("matmul", &data)?;
        let rg = self.out_requires(&[a, b]);
        let out = self.push(vec![m, n], data, rg);
        self.record(Op::Matmul { a, b }, out);
        Ok(out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", s),
            });
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.data(x);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xd[i * c + j];
            }
        }
        let rg = self.out_requires(&[x]);
        let out = self.push(vec![c, r], data, rg);
        self.record(Op::Transpose { x }, out);
        Ok(out)
    }

    /// Numerically stabilized softmax along `axis` (max subtraction).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::Dimension {
                op: "softmax",
                detail: format!("axis {} out of range for {:?}", axis, s),
            });
        }
        if s[axis] == 0 {
            return Err(TensorError::Dimension { op: "softmax", detail: "empty axis".into() });
        }
        let (outer, mid, inner) = split_at_axis(&s, axis);
        let xd = self.data(x);
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for m in 0..mid {
                    mx = mx.max(xd[base + m * inner]);
                }
                let mut sum = 0.0;
                for m in 0..mid {
                    let e = (xd[base + m * inner] - mx).exp();
                    data[base + m * inner] = e;
                    sum += e;
                }
                for m in 0..mid {
                    data[base + m * inner] /= sum;
                }
            }
        }
        check_finite("softmax", &data)?;
        let rg = self.out_requires(&[x]);
        let out = self.push(s, data, rg);
        self.record(Op::Softmax { x, axis }, out);
        Ok(out)
    }

    fn reduce(&mut self, kind: ReduceKind, x: Var, axis: Option<usize>, keepdim: bool) -> Result<Var> {
        let name: &'static str = match kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
            ReduceKind::Min => "min",
        };
        let s = self.shape(x).to_vec();
        let xd = self.data(x);
        let (out_shape, data) = match axis {
            Some(ax) => {
                if ax >= s.len() {
                    return Err(TensorError::Dimension {
                        op: name,
                        detail: format!("axis {} out of range for {:?}", ax, s),
                    });
                }
                if s[ax] == 0 {
                    return Err(TensorError::Dimension { op: name, detail: "empty axis".into() });
                }
                let (outer, mid, inner) = split_at_axis(&s, ax);
                let mut data = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * mid * inner + i;
                        data.push(reduce_slice(kind, xd, base, mid, inner));
                    }
                }
                let mut out_shape = s.clone();
                if keepdim {
                    out_shape[ax] = 1;
                } else {
                    out_shape.remove(ax);
                }
                (out_shape, data)
            }
            None => {
                if xd.is_empty() {
                    return Err(TensorError::Dimension { op: name, detail: "empty tensor".into() });
                }
                (Vec::new(), vec![reduce_slice(kind, xd, 0, xd.len(), 1)])
            }
        };
        check_finite(name, &data)?;
        let rg = self.out_requires(&[x]);
        let out = self.push(out_shape, data, rg);
        self.record(Op::Reduce { kind, x, axis }, out);
        Ok(out)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, Some(axis), false)
    }
    pub fn sum_keepdim(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, Some(axis), true)
    }
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, Some(axis), false)
    }
    pub fn mean_keepdim(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, Some(axis), true)
    }
    pub fn max_keepdim(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Max, x, Some(axis), true)
    }
    pub fn min_keepdim(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Min, x, Some(axis), true)
    }
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Max, x, Some(axis), false)
    }
    pub fn min_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceKind::Min, x, Some(axis), false)
    }
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, None, false)
    }
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, None, false)
    }
    pub fn max_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Max, x, None, false)
    }
    pub fn min_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Min, x, None, false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.nodes[x.0].numel() {
            return Err(TensorError::Dimension {
                op: "reshape",
                detail: format!("cannot reshape {:?} to {:?}", self.shape(x), shape),
            });
        }
        let data = self.data(x).to_vec();
        let rg = self.out_requires(&[x]);
        let out = self.push(shape.to_vec(), data, rg);
        self.record(Op::Reshape { x }, out);
        Ok(out)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Dimension { op: "concat", detail: "no inputs".into() });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::Dimension {
                op: "concat",
                detail: format!("axis {} out of range for {:?}", axis, first),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::Dimension {
                    op: "concat",
                    detail: format!("incompatible part shape {:?} vs {:?}", s, first),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut data = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for &p in parts {
            let e = self.shape(p)[axis];
            let pd = self.data(p);
            for o in 0..outer {
                let src = &pd[o * e * inner..(o + 1) * e * inner];
                let dst_base = o * total * inner + offset * inner;
                data[dst_base..dst_base + e * inner].copy_from_slice(src);
            }
            offset += e;
        }
        let rg = self.out_requires(parts);
        let out = self.push(out_shape, data, rg);
        self.record(Op::Concat { parts: parts.to_vec(), axis }, out);
        Ok(out)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::Dimension {
                op: "slice",
                detail: format!("slice [{start}, {}) on axis {axis} of {:?}", start + len, s),
            });
        }
        let (outer, mid, inner) = split_at_axis(&s, axis);
        let xd = self.data(x);
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_base = o * mid * inner + start * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&xd[src_base..src_base + len * inner]);
        }
        let mut out_shape = s;
        out_shape[axis] = len;
        let rg = self.out_requires(&[x]);
        let out = self.push(out_shape, data, rg);
        self.record(Op::Slice { x, axis, start, len }, out);
        Ok(out)
    }

    /// Non-overlapping average pooling of the last two axes by `factor`.
    pub fn avg_pool2(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (c, h, w) = image_dims("avg_pool2", &s)?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(TensorError::Dimension {
                op: "avg_pool2",
                detail: format!("factor {factor} does not divide {h}x{w}"),
            });
        }
        if factor == 1 {
            return self.reshape(x, &s);
        }
        let (oh, ow) = (h / factor, w / factor);
        let xd = self.data(x);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        let row = ch * h * w + (oy * factor + dy) * w + ox * factor;
                        for dx in 0..factor {
                            acc += xd[row + dx];
                        }
                    }
                    data[ch * oh * ow + oy * ow + ox] = acc * norm;
                }
            }
        }
        let mut out_shape = s;
        let rank = out_shape.len();
        out_shape[rank - 2] = oh;
        out_shape[rank - 1] = ow;
        let rg = self.out_requires(&[x]);
        let out = self.push(out_shape, data, rg);
        self.record(Op::AvgPool { x, factor }, out);
        Ok(out)
    }

    /// Bilinear resampling of the last two axes (half-pixel centers).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (c, h, w) = image_dims("resize_bilinear", &s)?;
        if h == 0 || w == 0 || oh == 0 || ow == 0 {
            return Err(TensorError::Dimension { op: "resize_bilinear", detail: "empty extent".into() });
        }
        let ys = lerp_taps(h, oh);
        let xs = lerp_taps(w, ow);
        let xd = self.data(x);
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let v00 = plane[y0 * w + x0];
                    let v01 = plane[y0 * w + x1];
                    let v10 = plane[y1 * w + x0];
                    let v11 = plane[y1 * w + x1];
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    data[ch * oh * ow + oy * ow + ox] = top + (bot - top) * wy;
                }
            }
        }
        check_finite("resize_bilinear", &data)?;
        let mut out_shape = s;
        let rank = out_shape.len();
        out_shape[rank - 2] = oh;
        out_shape[rank - 1] = ow;
        let rg = self.out_requires(&[x]);
        let out = self.push(out_shape, data, rg);
        self.record(Op::ResizeBilinear { x }, out);
        Ok(out)
    }
}

fn reduce_slice(kind: ReduceKind, xd: &[f64], base: usize, mid: usize, inner: usize) -> f64 {
    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut acc = 0.0;
            for m in 0..mid {
                acc += xd[base + m * inner];
            }
            if kind == ReduceKind::Mean {
                acc / mid as f64
            } else {
                acc
            }
        }
        ReduceKind::Max => {
            let mut best = xd[base];
            for m in 1..mid {
                let v = xd[base + m * inner];
                if v > best {
                    best = v;
                }
            }
            best
        }
        ReduceKind::Min => {
            let mut best = xd[base];
            for m in 1..mid {
                let v = xd[base + m * inner];
                if v < best {
                    best = v;
                }
            }
            best
        }
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
