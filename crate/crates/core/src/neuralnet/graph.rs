//! Tape-based reverse-mode differentiation over the small operator set the
//! velocity networks need.

use super::tensor::{Real, Tensor};
use super::NnError;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// `x [B, Cin, L]`, `w [Cout, Cin, K]`, `b [Cout]`, stride 1, zero padding `pad`.
    Conv1d { x: Var, w: Var, b: Var, pad: usize },
    /// `x [B, In]`, `w [Out, In]`, `b [Out]`.
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    /// Mean of adjacent frame pairs, `[B, C, L] -> [B, C, L/2]`.
    AvgPool2(Var),
    /// Nearest-neighbour, `[B, C, L] -> [B, C, 2L]`.
    Upsample2(Var),
    /// Concatenation along axis 1.
    Concat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Mean(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; all zeros when the loss does
    /// not depend on `v`.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Vec<T> {
        let n: usize = self.shapes[v.0].iter().product();
        self.grads[v.0].take().unwrap_or_else(|| vec![T::zero(); n])
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn dims3(t: &[usize], op: &str) -> Result<(usize, usize, usize), NnError> {
    match *t {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(NnError::Shape(format!("{op}: expected a rank-3 tensor, got {t:?}"))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter. `requires_grad` marks it for differentiation.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Sign pattern of every ReLU input, in graph order. Two evaluations with
    /// the same pattern lie on the same linear piece of the network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| *v > T::zero()))
            .collect()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op, parents: &[Var]) -> Result<Var, NnError> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { op: name, index: i });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (batch, cin, len) = dims3(self.value(x).shape(), "conv1d")?;
        let (cout, wcin, k) = dims3(self.value(w).shape(), "conv1d weight")?;
        if wcin != cin || self.value(b).shape() != [cout] || k % 2 == 0 {
            return Err(NnError::Shape(format!(
                "conv1d: input {:?}, weight {:?}, bias {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let pad = k / 2;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = vec![T::zero(); batch * cout * len];
        for bi in 0..batch {
            for o in 0..cout {
                let row = &mut out[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                row.fill(bs[o]);
                for i in 0..cin {
                    let xrow = &xs[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                    for kk in 0..k {
                        let wv = ws[(o * cin + i) * k + kk];
                        let (lo, hi, shift) = conv_range(len, kk, pad);
                        for (r, xv) in row[lo..hi].iter_mut().zip(&xrow[(lo as isize + shift) as usize..]) {
                            *r = *r + wv * *xv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, cout, len], out)?;
        self.push("conv1d", value, Op::Conv1d { x, w, b, pad }, &[x, w, b])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (batch, inp) = match *self.value(x).shape() {
            [a, b] => (a, b),
            ref s => return Err(NnError::Shape(format!("linear: expected [B, In], got {s:?}"))),
        };
        let (outp, winp) = match *self.value(w).shape() {
            [a, b] => (a, b),
            ref s => return Err(NnError::Shape(format!("linear weight: expected [Out, In], got {s:?}"))),
        };
        if winp != inp || self.value(b).shape() != [outp] {
            return Err(NnError::Shape(format!("linear: input width {inp}, weight {:?}", self.value(w).shape())));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let mut out = Vec::with_capacity(batch * outp);
        for bi in 0..batch {
            let xrow = &xs[bi * inp..(bi + 1) * inp];
            for o in 0..outp {
                let wrow = &ws[o * inp..(o + 1) * inp];
                out.push(bs[o] + wrow.iter().zip(xrow).map(|(a, b)| *a * *b).sum::<T>());
            }
        }
        let value = Tensor::new(vec![batch, outp], out)?;
        self.push("linear", value, Op::Linear { x, w, b }, &[x, w, b])
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(T) -> T) -> Result<Var, NnError> {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())?;
        self.push(name, value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.map("relu", x, Op::Relu(x), |a| a.max(T::zero()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        self.map("tanh", x, Op::Tanh(x), |a| a.tanh())
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, NnError> {
        let (b, c, l) = dims3(self.value(x).shape(), "avg_pool2")?;
        if l % 2 != 0 {
            return Err(NnError::Shape(format!("avg_pool2: odd length {l}")));
        }
        let half = T::lit(0.5);
        let xs = self.value(x).data();
        let out = xs.chunks_exact(2).map(|p| (p[0] + p[1]) * half).collect();
        let value = Tensor::new(vec![b, c, l / 2], out)?;
        self.push("avg_pool2", value, Op::AvgPool2(x), &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var, NnError> {
        let (b, c, l) = dims3(self.value(x).shape(), "upsample2")?;
        let out = self.value(x).data().iter().flat_map(|&v| [v, v]).collect();
        let value = Tensor::new(vec![b, c, 2 * l], out)?;
        self.push("upsample2", value, Op::Upsample2(x), &[x])
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(NnError::Shape(format!("concat: {sa:?} with {sb:?}")));
        }
        let inner: usize = sa[2..].iter().product();
        let (ra, rb) = (sa[1] * inner, sb[1] * inner);
        let mut out = Vec::with_capacity((ra + rb) * sa[0]);
        for bi in 0..sa[0] {
            out.extend_from_slice(&self.value(a).data()[bi * ra..(bi + 1) * ra]);
            out.extend_from_slice(&self.value(b).data()[bi * rb..(bi + 1) * rb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat(a, b), &[a, b])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NnError::Shape(format!("{name}: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NnError> {
        let v = self.value(x);
        let n = T::from_usize(v.len().max(1)).unwrap();
        let value = Tensor::scalar(v.data().iter().copied().sum::<T>() / n);
        self.push("mean", value, Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        let value = Tensor::scalar(self.value(x).data().iter().copied().sum::<T>());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(NnError::Shape(format!("backward needs a scalar loss, got {:?}", root.value.shape())));
        }
        if !root.requires_grad {
            return Err(NnError::Untracked);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(NnError::NonFinite { op: op_name(&self.nodes[i].op), index: j });
                }
            }
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), NnError> {
        let tracked = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, pad } => {
                let (batch, cin, len) = dims3(self.value(x).shape(), "conv1d")?;
                let (cout, _, k) = dims3(self.value(w).shape(), "conv1d weight")?;
                let xs = self.value(x).data();
                let ws = self.value(w).data();
                if tracked(b) {
                    let gb = slot(grads, b, self.nodes[b.0].value.len());
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                            gb[o] = gb[o] + grow.iter().copied().sum::<T>();
                        }
                    }
                }
                if tracked(w) {
                    let gw = slot(grads, w, self.nodes[w.0].value.len());
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                            for i in 0..cin {
                                let xrow = &xs[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                                for kk in 0..k {
                                    let (lo, hi, shift) = conv_range(len, kk, pad);
                                    let dot = grow[lo..hi]
                                        .iter()
                                        .zip(&xrow[(lo as isize + shift) as usize..])
                                        .map(|(a, b)| *a * *b)
                                        .sum::<T>();
                                    let slot = &mut gw[(o * cin + i) * k + kk];
                                    *slot = *slot + dot;
                                }
                            }
                        }
                    }
                }
                if tracked(x) {
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * len..(bi * cout + o + 1) * len];
                            for i in 0..cin {
                                let gxrow = &mut gx[(bi * cin + i) * len..(bi * cin + i + 1) * len];
                                for kk in 0..k {
                                    let wv = ws[(o * cin + i) * k + kk];
                                    let (lo, hi, shift) = conv_range(len, kk, pad);
                                    let start = (lo as isize + shift) as usize;
                                    for (dst, gv) in gxrow[start..start + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                                        *dst = *dst + wv * *gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(x);
                let (batch, inp) = (xv.shape()[0], xv.shape()[1]);
                let outp = self.value(w).shape()[0];
                let xs = xv.data();
                let ws = self.value(w).data();
                if tracked(b) {
                    let gb = slot(grads, b, self.nodes[b.0].value.len());
                    for bi in 0..batch {
                        for o in 0..outp {
                            gb[o] = gb[o] + g[bi * outp + o];
                        }
                    }
                }
                if tracked(w) {
                    let gw = slot(grads, w, self.nodes[w.0].value.len());
                    for bi in 0..batch {
                        for o in 0..outp {
                            let go = g[bi * outp + o];
                            for i in 0..inp {
                                gw[o * inp + i] = gw[o * inp + i] + go * xs[bi * inp + i];
                            }
                        }
                    }
                }
                if tracked(x) {
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for bi in 0..batch {
                        for o in 0..outp {
                            let go = g[bi * outp + o];
                            for i in 0..inp {
                                gx[bi * inp + i] = gx[bi * inp + i] + go * ws[o * inp + i];
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if tracked(x) {
                    let xs = self.value(x).data();
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for ((dst, gv), xv) in gx.iter_mut().zip(g).zip(xs) {
                        if *xv > T::zero() {
                            *dst = *dst + *gv;
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                if tracked(x) {
                    let ys = node.value.data();
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for ((dst, gv), y) in gx.iter_mut().zip(g).zip(ys) {
                        *dst = *dst + *gv * (T::one() - *y * *y);
                    }
                }
            }
            Op::AvgPool2(x) => {
                if tracked(x) {
                    let half = T::lit(0.5);
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for (pair, gv) in gx.chunks_exact_mut(2).zip(g) {
                        pair[0] = pair[0] + *gv * half;
                        pair[1] = pair[1] + *gv * half;
                    }
                }
            }
            Op::Upsample2(x) => {
                if tracked(x) {
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for (dst, pair) in gx.iter_mut().zip(g.chunks_exact(2)) {
                        *dst = *dst + pair[0] + pair[1];
                    }
                }
            }
            Op::Concat(a, b) => {
                let sa = self.value(a).shape();
                let inner: usize = sa[2..].iter().product();
                let ra = sa[1] * inner;
                let rb = self.value(b).shape()[1] * inner;
                for (v, offset, width) in [(a, 0, ra), (b, ra, rb)] {
                    if tracked(v) {
                        let gv = slot(grads, v, self.nodes[v.0].value.len());
                        for bi in 0..sa[0] {
                            let src = &g[bi * (ra + rb) + offset..bi * (ra + rb) + offset + width];
                            for (dst, s) in gv[bi * width..(bi + 1) * width].iter_mut().zip(src) {
                                *dst = *dst + *s;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if tracked(a) {
                    let ga = slot(grads, a, self.nodes[a.0].value.len());
                    for (dst, gv) in ga.iter_mut().zip(g) {
                        *dst = *dst + *gv;
                    }
                }
                if tracked(b) {
                    let gb = slot(grads, b, self.nodes[b.0].value.len());
                    for (dst, gv) in gb.iter_mut().zip(g) {
                        *dst = *dst + sign * *gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if tracked(v) {
                        let os = self.value(other).data();
                        let gv = slot(grads, v, self.nodes[v.0].value.len());
                        for ((dst, gg), o) in gv.iter_mut().zip(g).zip(os) {
                            *dst = *dst + *gg * *o;
                        }
                    }
                }
            }
            Op::Mean(x) | Op::Sum(x) => {
                if tracked(x) {
                    let n = self.value(x).len().max(1);
                    let scale = if matches!(node.op, Op::Mean(_)) { g[0] / T::from_usize(n).unwrap() } else { g[0] };
                    let gx = slot(grads, x, self.nodes[x.0].value.len());
                    for dst in gx.iter_mut() {
                        *dst = *dst + scale;
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

/// Output index range `[lo, hi)` for kernel tap `kk`, and the input offset.
fn conv_range(len: usize, kk: usize, pad: usize) -> (usize, usize, isize) {
    let shift = kk as isize - pad as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift.max(0)).max(lo as isize) as usize;
    (lo.min(len), hi.min(len), shift)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv1d { .. } => "conv1d",
        Op::Linear { .. } => "linear",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::AvgPool2(_) => "avg_pool2",
        Op::Upsample2(_) => "upsample2",
        Op::Concat(..) => "concat",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Mean(_) => "mean",
        Op::Sum(_) => "sum",
    }
}
