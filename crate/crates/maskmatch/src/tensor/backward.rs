//! Backward rules, one per taped op. `apply` reads the output gradient for
//! this pass and accumulates input contributions; gradients flow only into
//! tensors marked `requires_grad`.

use super::ops::{broadcast_strides, image_dims, lerp_taps, map_index, split_at_axis};
use super::*;

fn wants(nodes: &[Tensor], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn buf<'a>(temp: &'a mut [Option<Vec<f64>>], nodes: &[Tensor], v: Var) -> &'a mut Vec<f64> {
    temp[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].numel()])
}

pub(crate) fn apply(nodes: &[Tensor], op: &Op, out: Var, temp: &mut [Option<Vec<f64>>]) {
    let g = match &temp[out.0] {
        Some(g) => g.clone(),
        None => return,
    };
    match op {
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if wants(nodes, *a) {
                let bd = &nodes[b.0].data;
                let ga = buf(temp, nodes, *a);
                for i in 0..m {
                    for kk in 0..k {
                        let mut acc = 0.0;
                        let grow = &g[i * n..(i + 1) * n];
                        let brow = &bd[kk * n..(kk + 1) * n];
                        for (gj, bj) in grow.iter().zip(brow) {
                            acc += gj * bj;
                        }
                        ga[i * k + kk] += acc;
                    }
                }
            }
            if wants(nodes, *b) {
                let ad = &nodes[a.0].data;
                let gb = buf(temp, nodes, *b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = ad[i * k + kk];
                        let brow = &mut gb[kk * n..(kk + 1) * n];
                        for (o, gj) in brow.iter_mut().zip(grow) {
                            *o += aik * gj;
                        }
                    }
                }
            }
        }
        Op::Transpose { x } => {
            if wants(nodes, *x) {
                let (r, c) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                let gx = buf(temp, nodes, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Binary { kind, a, b } => {
            let out_shape = nodes[out.0].shape.clone();
            let os = strides(&out_shape);
            let ea = broadcast_strides(&nodes[a.0].shape, &out_shape);
            let eb = broadcast_strides(&nodes[b.0].shape, &out_shape);
            let ad = &nodes[a.0].data;
            let bd = &nodes[b.0].data;
            let same = nodes[a.0].shape == out_shape && nodes[b.0].shape == out_shape;
            if wants(nodes, *a) {
                let ga = buf(temp, nodes, *a);
                for (lin, gv) in g.iter().enumerate() {
                    let (ia, ib) = if same { (lin, lin) } else { (map_index(lin, &os, &ea), map_index(lin, &os, &eb)) };
                    ga[ia] += match kind {
                        BinaryKind::Add => *gv,
                        BinaryKind::Sub => *gv,
                        BinaryKind::Mul => *gv * bd[ib],
                        BinaryKind::Div => *gv / bd[ib],
                    };
                }
            }
            if wants(nodes, *b) {
                let gb = buf(temp, nodes, *b);
                for (lin, gv) in g.iter().enumerate() {
                    let (ia, ib) = if same { (lin, lin) } else { (map_index(lin, &os, &ea), map_index(lin, &os, &eb)) };
                    gb[ib] += match kind {
                        BinaryKind::Add => *gv,
                        BinaryKind::Sub => -*gv,
                        BinaryKind::Mul => *gv * ad[ia],
                        BinaryKind::Div => -*gv * ad[ia] / (bd[ib] * bd[ib]),
                    };
                }
            }
        }
        Op::Unary { kind, x } => {
            if wants(nodes, *x) {
                let xd = &nodes[x.0].data;
                let yd = &nodes[out.0].data;
                let gx = buf(temp, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += match kind {
                        UnaryKind::Sigmoid => g[i] * yd[i] * (1.0 - yd[i]),
                        UnaryKind::Log => g[i] / xd[i],
                        UnaryKind::Exp => g[i] * yd[i],
                        UnaryKind::Sqrt => g[i] * 0.5 / yd[i],
                        UnaryKind::Relu => {
                            if xd[i] > 0.0 {
                                g[i]
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            if wants(nodes, *x) {
                let xd = &nodes[x.0].data;
                let gx = buf(temp, nodes, *x);
                for i in 0..g.len() {
                    if xd[i] >= *lo && xd[i] <= *hi {
                        gx[i] += g[i];
                    }
                }
            }
        }
        Op::Affine { x, mul } => {
            if wants(nodes, *x) {
                let gx = buf(temp, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * mul;
                }
            }
        }
        Op::Softmax { x, axis } => {
            if wants(nodes, *x) {
                let yd = &nodes[out.0].data;
                let (outer, mid, inner) = split_at_axis(&nodes[out.0].shape, *axis);
                let gx = buf(temp, nodes, *x);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * mid * inner + i;
                        let mut dot = 0.0;
                        for m in 0..mid {
                            let idx = base + m * inner;
                            dot += g[idx] * yd[idx];
                        }
                        for m in 0..mid {
                            let idx = base + m * inner;
                            gx[idx] += yd[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::Reduce { kind, x, axis } => {
            if !wants(nodes, *x) {
                return;
            }
            let xd = &nodes[x.0].data;
            match axis {
                Some(ax) => {
                    let (outer, mid, inner) = split_at_axis(&nodes[x.0].shape, *ax);
                    let gx = buf(temp, nodes, *x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = g[o * inner + i];
                            let base = o * mid * inner + i;
                            match kind {
                                ReduceKind::Sum => {
                                    for m in 0..mid {
                                        gx[base + m * inner] += gv;
                                    }
                                }
                                ReduceKind::Mean => {
                                    let gm = gv / mid as f64;
                                    for m in 0..mid {
                                        gx[base + m * inner] += gm;
                                    }
                                }
                                // Ties route to the first extremum (lowest
                                // linear index in the slice).
                                ReduceKind::Max | ReduceKind::Min => {
                                    let mut arg = 0;
                                    let mut best = xd[base];
                                    for m in 1..mid {
                                        let v = xd[base + m * inner];
                                        let better = match kind {
                                            ReduceKind::Max => v > best,
                                            _ => v < best,
                                        };
                                        if better {
                                            best = v;
                                            arg = m;
                                        }
                                    }
                                    gx[base + arg * inner] += gv;
                                }
                            }
                        }
                    }
                }
                None => {
                    let gv = g[0];
                    let n = xd.len();
                    let gx = buf(temp, nodes, *x);
                    match kind {
                        ReduceKind::Sum => {
                            for v in gx.iter_mut() {
                                *v += gv;
                            }
                        }
                        ReduceKind::Mean => {
                            let gm = gv / n as f64;
                            for v in gx.iter_mut() {
                                *v += gm;
                            }
                        }
                        ReduceKind::Max | ReduceKind::Min => {
                            let mut arg = 0;
                            let mut best = xd[0];
                            for (i, &v) in xd.iter().enumerate().skip(1) {
                                let better = match kind {
                                    ReduceKind::Max => v > best,
                                    _ => v < best,
                                };
                                if better {
                                    best = v;
                                    arg = i;
                                }
                            }
                            gx[arg] += gv;
                        }
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if wants(nodes, *x) {
                let gx = buf(temp, nodes, *x);
                for (o, gv) in gx.iter_mut().zip(&g) {
                    *o += gv;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let out_shape = &nodes[out.0].shape;
            let (outer, total, inner) = split_at_axis(out_shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let e = nodes[p.0].shape[*axis];
                if wants(nodes, p) {
                    let gp = buf(temp, nodes, p);
                    for o in 0..outer {
                        let src_base = o * total * inner + offset * inner;
                        let dst_base = o * e * inner;
                        for i in 0..e * inner {
                            gp[dst_base + i] += g[src_base + i];
                        }
                    }
                }
                offset += e;
            }
        }
        Op::Slice { x, axis, start, len } => {
            if wants(nodes, *x) {
                let (outer, mid, inner) = split_at_axis(&nodes[x.0].shape, *axis);
                let gx = buf(temp, nodes, *x);
                for o in 0..outer {
                    let dst_base = o * mid * inner + start * inner;
                    let src_base = o * len * inner;
                    for i in 0..len * inner {
                        gx[dst_base + i] += g[src_base + i];
                    }
                }
            }
        }
        Op::AvgPool { x, factor } => {
            if wants(nodes, *x) {
                let (c, h, w) = image_dims("avg_pool2", &nodes[x.0].shape).expect("validated");
                let f = *factor;
                let (oh, ow) = (h / f, w / f);
                let norm = 1.0 / (f * f) as f64;
                let gx = buf(temp, nodes, *x);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[ch * oh * ow + oy * ow + ox] * norm;
                            for dy in 0..f {
                                let row = ch * h * w + (oy * f + dy) * w + ox * f;
                                for dx in 0..f {
                                    gx[row + dx] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::ResizeBilinear { x } => {
            if wants(nodes, *x) {
                let (c, h, w) = image_dims("resize_bilinear", &nodes[x.0].shape).expect("validated");
                let os = &nodes[out.0].shape;
                let (oh, ow) = (os[os.len() - 2], os[os.len() - 1]);
                let ys = lerp_taps(h, oh);
                let xs = lerp_taps(w, ow);
                let gx = buf(temp, nodes, *x);
                for ch in 0..c {
                    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                            let gv = g[ch * oh * ow + oy * ow + ox];
                            let base = ch * h * w;
                            gx[base + y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            gx[base + y0 * w + x1] += gv * (1.0 - wy) * wx;
                            gx[base + y1 * w + x0] += gv * wy * (1.0 - wx);
                            gx[base + y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
            }
        }
    }
}
