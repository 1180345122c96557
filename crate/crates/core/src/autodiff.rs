//! Minimal reverse-mode differentiation over row-major `f64` matrices.
//!
//! Every value on a [`Tape`] is a 2-D matrix. Token features of a
//! `T x J` pose sequence are stored as an `(T*J) x C` matrix whose row
//! `t*J + j` holds joint `j` of frame `t`; the attention op uses that layout
//! to group tokens by frame (spatial) or by joint (temporal).

use ndarray::{Array1, Array2, Axis, Zip};

use crate::fastmath;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How self-attention groups the `T*J` token rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionLayout {
    /// Attend across the `J` joints of each frame.
    Spatial,
    /// Attend across the `T` frames of each joint.
    Temporal,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionShape {
    pub frames: usize,
    pub joints: usize,
    pub heads: usize,
    pub layout: AttentionLayout,
}

impl AttentionShape {
    fn groups(&self) -> usize {
        match self.layout {
            AttentionLayout::Spatial => self.frames,
            AttentionLayout::Temporal => self.joints,
        }
    }

    fn group_len(&self) -> usize {
        match self.layout {
            AttentionLayout::Spatial => self.joints,
            AttentionLayout::Temporal => self.frames,
        }
    }

    #[inline]
    fn row(&self, group: usize, token: usize) -> usize {
        match self.layout {
            AttentionLayout::Spatial => group * self.joints + token,
            AttentionLayout::Temporal => token * self.joints + group,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    GatherRows(Var, Vec<usize>),
    MaskedAddRow {
        x: Var,
        row: Var,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Gelu { x: Var, tanh: Array2<f64> },
    Sigmoid(Var),
    ConcatCols(Var, Var),
    Attention {
        qkv: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf: an input or a parameter.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x + bias` with a `1 x C` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        self.push(value, Op::AddBias(x, bias))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let y = self.matmul(x, weight);
        self.add_bias(y, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Row `i` of the result is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((indices.len(), t.ncols()));
        for (mut out, &i) in value.outer_iter_mut().zip(&indices) {
            out.assign(&t.row(i));
        }
        self.push(value, Op::GatherRows(table, indices))
    }

    /// Adds the `1 x C` row to every row of `x` whose mask entry is set.
    pub fn masked_add_row(&mut self, x: Var, row: Var, mask: Vec<bool>) -> Var {
        let mut value = self.value(x).clone();
        let r = self.value(row).row(0).to_owned();
        for (mut out, &m) in value.outer_iter_mut().zip(&mask) {
            if m {
                out += &r;
            }
        }
        self.push(value, Op::MaskedAddRow { x, row, mask })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let c = xv.ncols() as f64;
        let mut normalized = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, s) in normalized.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / c;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / c;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *s;
        }
        let value = &normalized * self.value(gain) + self.value(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let tanh = xv.mapv(|v| fastmath::tanh(GELU_C * (v + GELU_A * v * v * v)));
        let mut value = xv.clone();
        Zip::from(&mut value).and(&tanh).for_each(|v, &t| *v = 0.5 * *v * (1.0 + t));
        self.push(value, Op::Gelu { x, tanh })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(fastmath::sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols needs equal row counts");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Multi-head scaled dot-product self-attention. `qkv` is `N x 3D` with
    /// query, key and value blocks side by side; the result is `N x D`.
    pub fn attention(&mut self, qkv: Var, shape: AttentionShape) -> Var {
        let x = self.value(qkv);
        let dim = x.ncols() / 3;
        assert_eq!(x.ncols(), 3 * dim, "qkv width must be a multiple of 3");
        assert_eq!(x.nrows(), shape.frames * shape.joints, "qkv rows must equal T*J");
        assert_eq!(dim % shape.heads, 0, "feature dim must divide by heads");
        let dk = dim / shape.heads;
        let n = shape.group_len();
        let scale = 1.0 / (dk as f64).sqrt();
        let src = x.as_slice().expect("tape values are contiguous");
        let stride = 3 * dim;

        let mut value = Array2::zeros((x.nrows(), dim));
        let out = value.as_slice_mut().expect("contiguous");
        let mut probs = vec![0.0; shape.groups() * shape.heads * n * n];
        let mut q = vec![0.0; n * dk];
        let mut k = vec![0.0; n * dk];
        let mut v = vec![0.0; n * dk];
        for g in 0..shape.groups() {
            for h in 0..shape.heads {
                let off = h * dk;
                for i in 0..n {
                    let r = shape.row(g, i) * stride;
                    q[i * dk..(i + 1) * dk].copy_from_slice(&src[r + off..r + off + dk]);
                    k[i * dk..(i + 1) * dk].copy_from_slice(&src[r + dim + off..r + dim + off + dk]);
                    v[i * dk..(i + 1) * dk]
                        .copy_from_slice(&src[r + 2 * dim + off..r + 2 * dim + off + dk]);
                }
                let p = &mut probs[(g * shape.heads + h) * n * n..(g * shape.heads + h + 1) * n * n];
                for (qi, row) in q.chunks_exact(dk).zip(p.chunks_exact_mut(n)) {
                    let mut max = f64::NEG_INFINITY;
                    for (s, kj) in row.iter_mut().zip(k.chunks_exact(dk)) {
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        max = max.max(*s);
                    }
                    for s in row.iter_mut() {
                        *s -= max;
                    }
                    fastmath::exp_inplace(row);
                    let inv = 1.0 / row.iter().sum::<f64>();
                    for s in row.iter_mut() {
                        *s *= inv;
                    }
                }
                for i in 0..n {
                    let o = shape.row(g, i) * dim + off;
                    let oi = &mut out[o..o + dk];
                    for (&pk, vk) in p[i * n..(i + 1) * n].iter().zip(v.chunks_exact(dk)) {
                        for (dst, &vv) in oi.iter_mut().zip(vk) {
                            *dst += pk * vv;
                        }
                    }
                }
            }
        }
        self.push(value, Op::Attention { qkv, shape, probs })
    }

    /// Attention probabilities of an attention node, laid out as
    /// `[group][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Back-propagates `seed` (the gradient of some scalar w.r.t. `output`).
    pub fn backward(&self, output: Var, seed: Array2<f64>) -> Gradients {
        assert_eq!(seed.dim(), self.value(output).dim(), "seed shape must match output");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::AddBias(x, bias) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[bias.0], db);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::GatherRows(table, indices) => {
                    let mut dt = Array2::zeros(self.value(*table).dim());
                    for (row, &i) in g.outer_iter().zip(indices) {
                        let mut dst = dt.row_mut(i);
                        dst += &row;
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::MaskedAddRow { x, row, mask } => {
                    let mut dr = Array1::<f64>::zeros(g.ncols());
                    for (r, &m) in g.outer_iter().zip(mask) {
                        if m {
                            dr += &r;
                        }
                    }
                    accumulate(&mut grads[row.0], dr.insert_axis(Axis(0)));
                    accumulate(&mut grads[x.0], g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let dgain = (&g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let mut dx = &g * self.value(*gain);
                    let c = dx.ncols() as f64;
                    Zip::from(dx.rows_mut())
                        .and(normalized.rows())
                        .and(inv_std)
                        .for_each(|mut d, xh, &s| {
                            let mean_d = d.sum() / c;
                            let mean_dx = d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c;
                            Zip::from(&mut d).and(xh).for_each(|dv, &xv| {
                                *dv = s * (*dv - mean_d - xv * mean_dx);
                            });
                        });
                    accumulate(&mut grads[gain.0], dgain);
                    accumulate(&mut grads[bias.0], dbias);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Gelu { x, tanh } => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(self.value(*x)).and(tanh).for_each(|d, &v, &th| {
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                    });
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    let da = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let db = g.slice(ndarray::s![.., ca..]).to_owned();
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Attention { qkv, shape, probs } => {
                    let dq = self.attention_backward(*qkv, shape, probs, &g);
                    accumulate(&mut grads[qkv.0], dq);
                }
            }
        }
        Gradients { grads }
    }

    fn attention_backward(
        &self,
        qkv: Var,
        shape: &AttentionShape,
        probs: &[f64],
        g: &Array2<f64>,
    ) -> Array2<f64> {
        let x = self.value(qkv);
        let dim = x.ncols() / 3;
        let dk = dim / shape.heads;
        let n = shape.group_len();
        let scale = 1.0 / (dk as f64).sqrt();
        let stride = 3 * dim;
        let src = x.as_slice().expect("contiguous");
        let g = g.as_standard_layout();
        let gs = g.as_slice().expect("contiguous");
        let mut dqkv = Array2::zeros(x.dim());
        let dst = dqkv.as_slice_mut().expect("contiguous");
        let mut q = vec![0.0; n * dk];
        let mut k = vec![0.0; n * dk];
        let mut v = vec![0.0; n * dk];
        let mut d_out = vec![0.0; n * dk];
        let mut dq = vec![0.0; n * dk];
        let mut dkey = vec![0.0; n * dk];
        let mut dv = vec![0.0; n * dk];
        let mut ds = vec![0.0; n * n];
        for grp in 0..shape.groups() {
            for h in 0..shape.heads {
                let off = h * dk;
                for i in 0..n {
                    let r = shape.row(grp, i);
                    let b = r * stride + off;
                    let span = i * dk..(i + 1) * dk;
                    q[span.clone()].copy_from_slice(&src[b..b + dk]);
                    k[span.clone()].copy_from_slice(&src[b + dim..b + dim + dk]);
                    v[span.clone()].copy_from_slice(&src[b + 2 * dim..b + 2 * dim + dk]);
                    d_out[span].copy_from_slice(&gs[r * dim + off..r * dim + off + dk]);
                }
                let p = &probs[(grp * shape.heads + h) * n * n..(grp * shape.heads + h + 1) * n * n];
                // dS = P * (dO V^T - rowsum(P * dO V^T))
                for ((doi, prow), dsrow) in d_out
                    .chunks_exact(dk)
                    .zip(p.chunks_exact(n))
                    .zip(ds.chunks_exact_mut(n))
                {
                    let mut dot = 0.0;
                    for ((s, vk), &pk) in dsrow.iter_mut().zip(v.chunks_exact(dk)).zip(prow) {
                        let dp: f64 = doi.iter().zip(vk).map(|(a, b)| a * b).sum();
                        *s = dp;
                        dot += pk * dp;
                    }
                    for (s, &pk) in dsrow.iter_mut().zip(prow) {
                        *s = pk * (*s - dot) * scale;
                    }
                }
                dq.fill(0.0);
                dkey.fill(0.0);
                dv.fill(0.0);
                for qi in 0..n {
                    let dsrow = &ds[qi * n..(qi + 1) * n];
                    let prow = &p[qi * n..(qi + 1) * n];
                    let qrow = &q[qi * dk..(qi + 1) * dk];
                    let dorow = &d_out[qi * dk..(qi + 1) * dk];
                    let dqrow = &mut dq[qi * dk..(qi + 1) * dk];
                    for ki in 0..n {
                        let w = dsrow[ki];
                        let pw = prow[ki];
                        let krow = &k[ki * dk..(ki + 1) * dk];
                        for (a, &b) in dqrow.iter_mut().zip(krow) {
                            *a += w * b;
                        }
                        let dkrow = &mut dkey[ki * dk..(ki + 1) * dk];
                        for (a, &b) in dkrow.iter_mut().zip(qrow) {
                            *a += w * b;
                        }
                        let dvrow = &mut dv[ki * dk..(ki + 1) * dk];
                        for (a, &b) in dvrow.iter_mut().zip(dorow) {
                            *a += pw * b;
                        }
                    }
                }
                for i in 0..n {
                    let b = shape.row(grp, i) * stride + off;
                    let span = i * dk..(i + 1) * dk;
                    dst[b..b + dk].copy_from_slice(&dq[span.clone()]);
                    dst[b + dim..b + dim + dk].copy_from_slice(&dkey[span.clone()]);
                    dst[b + 2 * dim..b + 2 * dim + dk].copy_from_slice(&dv[span]);
                }
            }
        }
        dqkv
    }
}
