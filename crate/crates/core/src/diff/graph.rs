use crate::diff::ops::{self, Conv1dGeom, ScanGeom, Unary};
use crate::diff::{DiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BroadcastAdd(Var, Var),
    Unary(Var, Unary),
    Sum(Var),
    Mean(Var),
    MeanOverAxis { x: Var, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Transpose(Var),
    Reshape(Var),
    Conv1d { x: Var, w: Var, b: Var, geom: Conv1dGeom },
    DepthwiseConv { x: Var, w: Var, b: Var },
    Norm { x: Var, gain: Var, bias: Option<Var>, xhat: Vec<T>, inv: Vec<T> },
    Scan { x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var, geom: ScanGeom, states: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &str, detail: impl std::fmt::Display) -> DiffError {
    DiffError::ShapeMismatch(format!("{op}: {detail}"))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFiniteResult(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        ops::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(va.shape().to_vec(), data)?;
        self.push(name, t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, DiffError> {
        let t = self.value(x).map(|v| v * c);
        self.push("scale", t, Op::Scale(x, c))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn broadcast_add(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(b) != [n] {
            return Err(mismatch("broadcast_add", format!("{:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = *v + bias[i % n];
        }
        self.push("broadcast_add", t, Op::BroadcastAdd(x, b))
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var, DiffError> {
        let t = self.value(x).map(|v| u.apply(v));
        self.push(u.name(), t, Op::Unary(x, u))
    }

    pub fn mish(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Mish)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Exp)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of_usize(v.len());
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean along `axis`; the axis is dropped from the shape.
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(mismatch("mean_over_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = ops::split_axis(&shape, axis);
        let inv = T::one() / T::of_usize(len);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut new_shape = shape;
        new_shape.remove(axis);
        let t = if new_shape.is_empty() { Tensor::scalar(out[0]) } else { Tensor::from_vec(new_shape, out)? };
        self.push("mean_over_axis", t, Op::MeanOverAxis { x, axis })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, DiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(mismatch("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = ops::split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let t = Tensor::from_vec(new_shape, out)?;
        self.push("slice", t, Op::Slice { x, axis, start })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        let first = parts.first().ok_or_else(|| DiffError::InvalidArgument("concat of nothing".into()))?;
        let mut shape = self.shape(*first).to_vec();
        if axis >= shape.len() {
            return Err(mismatch("concat", format!("axis {axis} of {shape:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == shape.len() && s.iter().zip(&shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", format!("{s:?} vs {shape:?} along {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = ops::split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        shape[axis] = total;
        let t = Tensor::from_vec(shape, out)?;
        self.push("concat", t, Op::Concat { parts: parts.to_vec(), axis })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, DiffError> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::from_vec(vec![c, r], out)?;
        self.push("transpose", t, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, DiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x))
    }

    /// Dense convolution over `x: [time, c_in]` with `w: [c_out, c_in, kernel]`, `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: (usize, usize)) -> Result<Var, DiffError> {
        let (t_in, c_in) = self.value(x).dims2()?;
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, kernel] = ws[..] else {
            return Err(mismatch("conv1d", format!("weight shape {ws:?}")));
        };
        if wc_in != c_in || self.shape(b) != [c_out] {
            return Err(mismatch("conv1d", format!("input {:?}, weight {ws:?}, bias {:?}", self.shape(x), self.shape(b))));
        }
        let geom = Conv1dGeom { t_in, c_in, c_out, kernel, stride, pad_left: padding.0, pad_right: padding.1 };
        let t_out = geom
            .t_out()
            .ok_or_else(|| mismatch("conv1d", format!("kernel {kernel} longer than padded input {t_in}")))?;
        let y = ops::conv1d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let t = Tensor::from_vec(vec![t_out, c_out], y)?;
        self.push("conv1d", t, Op::Conv1d { x, w, b, geom })
    }

    /// Causal per-channel convolution over `x: [time, ch]` with `w: [ch, kernel]`, `b: [ch]`.
    pub fn depthwise_conv1d_causal(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let (t_len, ch) = self.value(x).dims2()?;
        let (wc, k) = self.value(w).dims2()?;
        if wc != ch || self.shape(b) != [ch] {
            return Err(mismatch("depthwise_conv1d", format!("input {:?}, weight [{wc},{k}]", self.shape(x))));
        }
        let y = ops::depthwise_causal_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), t_len, ch, k);
        let t = Tensor::from_vec(vec![t_len, ch], y)?;
        self.push("depthwise_conv1d", t, Op::DepthwiseConv { x, w, b })
    }

    fn norm(&mut self, name: &'static str, x: Var, gain: Var, bias: Option<Var>, eps: T) -> Result<Var, DiffError> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.shape(gain) != [cols] || bias.is_some_and(|b| self.shape(b) != [cols]) {
            return Err(mismatch(name, format!("input {:?}, gain {:?}", self.shape(x), self.shape(gain))));
        }
        let (y, xhat, inv) = ops::norm_forward(
            self.value(x).data(),
            self.value(gain).data(),
            bias.map(|b| self.value(b).data()),
            rows,
            cols,
            eps,
            bias.is_some(),
        );
        let t = Tensor::from_vec(vec![rows, cols], y)?;
        self.push(name, t, Op::Norm { x, gain, bias, xhat, inv })
    }

    /// Layer normalization over the last axis of a matrix.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, DiffError> {
        self.norm("layer_norm", x, gain, Some(bias), eps)
    }

    /// RMS normalization over the last axis of a matrix.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var, DiffError> {
        self.norm("rms_norm", x, gain, None, eps)
    }

    /// Selective scan (see [`ops::scan_forward`]).
    ///
    /// `x: [T, heads*head_dim]`, `delta: [T, heads]`, `a: [heads]`,
    /// `b, c: [T, d_state]`, `d: [heads]`.
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var, DiffError> {
        let (t_len, width) = self.value(x).dims2()?;
        let (td, heads) = self.value(delta).dims2()?;
        let (tb, d_state) = self.value(b).dims2()?;
        let ok = td == t_len
            && tb == t_len
            && heads > 0
            && width % heads == 0
            && self.shape(c) == [t_len, d_state]
            && self.shape(a) == [heads]
            && self.shape(d) == [heads];
        if !ok {
            return Err(mismatch(
                "selective_scan",
                format!(
                    "x {:?}, delta {:?}, a {:?}, b {:?}, c {:?}, d {:?}",
                    self.shape(x),
                    self.shape(delta),
                    self.shape(a),
                    self.shape(b),
                    self.shape(c),
                    self.shape(d)
                ),
            ));
        }
        let geom = ScanGeom { t_len, heads, head_dim: width / heads, d_state };
        let (y, states) = ops::scan_forward(
            self.value(x).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(b).data(),
            self.value(c).data(),
            self.value(d).data(),
            &geom,
        );
        let t = Tensor::from_vec(vec![t_len, width], y)?;
        self.push("selective_scan", t, Op::Scan { x, delta, a, b, c, d, geom, states })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, data: Vec<T>| {
            let shape = self.value(v).shape();
            let t = Tensor::from_vec(shape.to_vec(), data).expect("gradient shape matches value");
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape()[1];
                let mut da = vec![T::zero(); m * k];
                ops::matmul_bt_acc(gd, self.value(*b).data(), &mut da, m, n, k);
                let mut db = vec![T::zero(); k * n];
                ops::matmul_at_acc(self.value(*a).data(), gd, &mut db, m, k, n);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                acc(*b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Scale(x, c) => acc(*x, gd.iter().map(|&v| v * *c).collect()),
            Op::BroadcastAdd(x, b) => {
                let n = self.value(*b).len();
                let mut db = vec![T::zero(); n];
                for (k, &v) in gd.iter().enumerate() {
                    db[k % n] = db[k % n] + v;
                }
                acc(*x, gd.to_vec());
                acc(*b, db);
            }
            Op::Unary(x, u) => {
                let xv = self.value(*x).data();
                let yv = self.nodes[i].value.data();
                acc(*x, gd.iter().zip(xv).zip(yv).map(|((&g, &a), &y)| g * u.derivative(a, y)).collect());
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![gd[0] / T::of_usize(n); n]);
            }
            Op::MeanOverAxis { x, axis } => {
                let (outer, len, inner) = ops::split_axis(self.value(*x).shape(), *axis);
                let inv = T::one() / T::of_usize(len);
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        dx.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * inv));
                    }
                }
                acc(*x, dx);
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = ops::split_axis(self.value(*x).shape(), *axis);
                let len = self.nodes[i].value.shape()[*axis];
                let mut dx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = ops::split_axis(self.nodes[i].value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    let mut dp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dp.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    offset += len;
                    acc(p, dp);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut dx = vec![T::zero(); r * c];
                for a in 0..r {
                    for b in 0..c {
                        dx[a * c + b] = gd[b * r + a];
                    }
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = ops::conv1d_backward(self.value(*x).data(), self.value(*w).data(), gd, geom);
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::DepthwiseConv { x, w, b } => {
                let (t_len, ch) = self.value(*x).dims2().unwrap();
                let k = self.value(*w).shape()[1];
                let (dx, dw, db) =
                    ops::depthwise_causal_backward(self.value(*x).data(), self.value(*w).data(), gd, t_len, ch, k);
                acc(*x, dx);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Norm { x, gain, bias, xhat, inv } => {
                let (rows, cols) = self.value(*x).dims2().unwrap();
                let (dx, dg, db) =
                    ops::norm_backward(gd, self.value(*gain).data(), xhat, inv, rows, cols, bias.is_some());
                acc(*x, dx);
                acc(*gain, dg);
                if let Some(b) = bias {
                    acc(*b, db);
                }
            }
            Op::Scan { x, delta, a, b, c, d, geom, states } => {
                let sg = ops::scan_backward(
                    self.value(*x).data(),
                    self.value(*delta).data(),
                    self.value(*a).data(),
                    self.value(*b).data(),
                    self.value(*c).data(),
                    self.value(*d).data(),
                    states,
                    gd,
                    geom,
                );
                acc(*x, sg.dx);
                acc(*delta, sg.ddelta);
                acc(*a, sg.da);
                acc(*b, sg.db);
                acc(*c, sg.dc);
                acc(*d, sg.dd);
            }
        }
    }
}

/// Result of [`Graph::backward`]: `d loss / d node` for every node the loss depends on.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of nodes the reverse sweep processed.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
