//! Forward and backward kernels on raw row-major buffers.

use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Mish,
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Tanh,
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Mish => "mish",
            Unary::Silu => "silu",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Tanh => "tanh",
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Mish => x * softplus(x).tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Tanh => x.tanh(),
        }
    }

    /// Derivative at input `x` with output `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        let one = T::one();
        match self {
            Unary::Mish => {
                let t = softplus(x).tanh();
                t + x * (one - t * t) * sigmoid(x)
            }
            Unary::Silu => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            Unary::Sigmoid => y * (one - y),
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
            Unary::Tanh => one - y * y,
        }
    }
}

/// `c[m,n] += a[m,k] * b[k,n]`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
pub fn matmul_bt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * n + j] = c[i * n + j] + dot;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
pub fn matmul_at_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Geometry of a dense 1-D convolution over a `(time, channels)` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub t_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dGeom {
    pub fn t_out(&self) -> Option<usize> {
        let padded = self.t_in + self.pad_left + self.pad_right;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Input frame feeding output `t` through tap `j`, if not in the zero padding.
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let pos = t * self.stride + j;
        (pos >= self.pad_left && pos - self.pad_left < self.t_in).then(|| pos - self.pad_left)
    }
}

/// Weight `[c_out, c_in, kernel]` rearranged to `[kernel, c_out, c_in]` so taps are contiguous.
fn taps_major<T: Scalar>(w: &[T], g: &Conv1dGeom) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for o in 0..g.c_out {
        for i in 0..g.c_in {
            for j in 0..g.kernel {
                out[(j * g.c_out + o) * g.c_in + i] = w[(o * g.c_in + i) * g.kernel + j];
            }
        }
    }
    out
}

pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], g: &Conv1dGeom) -> Vec<T> {
    let t_out = g.t_out().expect("validated geometry");
    let wt = taps_major(w, g);
    let mut y = Vec::with_capacity(t_out * g.c_out);
    for _ in 0..t_out {
        y.extend_from_slice(b);
    }
    for t in 0..t_out {
        let yrow = &mut y[t * g.c_out..(t + 1) * g.c_out];
        for j in 0..g.kernel {
            let Some(s) = g.source(t, j) else { continue };
            let xrow = &x[s * g.c_in..(s + 1) * g.c_in];
            for (o, yv) in yrow.iter_mut().enumerate() {
                let wrow = &wt[(j * g.c_out + o) * g.c_in..(j * g.c_out + o + 1) * g.c_in];
                let dot: T = wrow.iter().zip(xrow).map(|(&a, &c)| a * c).sum();
                *yv = *yv + dot;
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    g: &Conv1dGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let t_out = g.t_out().expect("validated geometry");
    let wt = taps_major(w, g);
    let mut dx = vec![T::zero(); x.len()];
    let mut dwt = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); g.c_out];
    for t in 0..t_out {
        let gyrow = &gy[t * g.c_out..(t + 1) * g.c_out];
        for (d, &v) in db.iter_mut().zip(gyrow) {
            *d = *d + v;
        }
        for j in 0..g.kernel {
            let Some(s) = g.source(t, j) else { continue };
            let xrow = &x[s * g.c_in..(s + 1) * g.c_in];
            for (o, &gv) in gyrow.iter().enumerate() {
                if gv == T::zero() {
                    continue;
                }
                let base = (j * g.c_out + o) * g.c_in;
                let dxrow = &mut dx[s * g.c_in..(s + 1) * g.c_in];
                for i in 0..g.c_in {
                    dxrow[i] = dxrow[i] + gv * wt[base + i];
                    dwt[base + i] = dwt[base + i] + gv * xrow[i];
                }
            }
        }
    }
    let mut dw = vec![T::zero(); w.len()];
    for o in 0..g.c_out {
        for i in 0..g.c_in {
            for j in 0..g.kernel {
                dw[(o * g.c_in + i) * g.kernel + j] = dwt[(j * g.c_out + o) * g.c_in + i];
            }
        }
    }
    (dx, dw, db)
}

/// Causal per-channel convolution: `y[t,c] = b[c] + sum_j w[c,j] x[t + j - (K-1), c]`.
pub fn depthwise_causal_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], t_len: usize, ch: usize, k: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(t_len * ch);
    for t in 0..t_len {
        for c in 0..ch {
            let mut acc = b[c];
            for j in 0..k {
                if let Some(s) = (t + j).checked_sub(k - 1) {
                    acc = acc + w[c * k + j] * x[s * ch + c];
                }
            }
            y.push(acc);
        }
    }
    y
}

pub fn depthwise_causal_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    t_len: usize,
    ch: usize,
    k: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); ch];
    for t in 0..t_len {
        for c in 0..ch {
            let gv = gy[t * ch + c];
            db[c] = db[c] + gv;
            for j in 0..k {
                if let Some(s) = (t + j).checked_sub(k - 1) {
                    dx[s * ch + c] = dx[s * ch + c] + gv * w[c * k + j];
                    dw[c * k + j] = dw[c * k + j] + gv * x[s * ch + c];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Row-wise normalization over the last axis.
///
/// With `center` it is layer norm (`(x - mean) / sqrt(var + eps)`), otherwise
/// RMS norm (`x / sqrt(mean(x^2) + eps)`). Returns `(y, xhat, inv_scale)`.
pub fn norm_forward<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: Option<&[T]>,
    rows: usize,
    cols: usize,
    eps: T,
    center: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::of_usize(cols);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mu = if center { row.iter().copied().sum::<T>() / n } else { T::zero() };
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv.push(is);
        for c in 0..cols {
            let h = (row[c] - mu) * is;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gain[c] + bias.map_or(T::zero(), |b| b[c]);
        }
    }
    (y, xhat, inv)
}

/// Returns `(dx, dgain, dbias)`.
pub fn norm_backward<T: Scalar>(
    gy: &[T],
    gain: &[T],
    xhat: &[T],
    inv: &[T],
    rows: usize,
    cols: usize,
    center: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::of_usize(cols);
    let mut dx = vec![T::zero(); gy.len()];
    let mut dg = vec![T::zero(); cols];
    let mut db = vec![T::zero(); cols];
    let mut gh = vec![T::zero(); cols];
    for r in 0..rows {
        let off = r * cols;
        let mut mean_gh = T::zero();
        let mut mean_ghx = T::zero();
        for c in 0..cols {
            let g = gy[off + c];
            dg[c] = dg[c] + g * xhat[off + c];
            db[c] = db[c] + g;
            gh[c] = g * gain[c];
            mean_gh = mean_gh + gh[c];
            mean_ghx = mean_ghx + gh[c] * xhat[off + c];
        }
        mean_gh = mean_gh / n;
        mean_ghx = mean_ghx / n;
        if !center {
            mean_gh = T::zero();
        }
        for c in 0..cols {
            dx[off + c] = inv[r] * (gh[c] - mean_gh - xhat[off + c] * mean_ghx);
        }
    }
    (dx, dg, db)
}

/// Shapes of a selective scan: `heads` heads of `head_dim` channels sharing a
/// `d_state`-wide input/output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanGeom {
    pub t_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
}

impl ScanGeom {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    fn state_len(&self) -> usize {
        self.heads * self.head_dim * self.d_state
    }
}

/// Per head `h`, with `alpha = exp(delta[t,h] * a[h])`:
///
/// ```text
/// S_t = alpha * S_{t-1} + delta[t,h] * x_t B_t^T      (head_dim x d_state)
/// y_t = S_t C_t + d[h] * x_t
/// ```
///
/// Returns the outputs `[T, heads*head_dim]` and every state `S_1..S_T`.
pub fn scan_forward<T: Scalar>(
    x: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
    g: &ScanGeom,
) -> (Vec<T>, Vec<T>) {
    let (w, n, p) = (g.width(), g.d_state, g.head_dim);
    let sl = g.state_len();
    let mut y = vec![T::zero(); g.t_len * w];
    let mut states = vec![T::zero(); g.t_len * sl];
    let mut cur = vec![T::zero(); sl];
    for t in 0..g.t_len {
        let bt = &bm[t * n..(t + 1) * n];
        let ct = &cm[t * n..(t + 1) * n];
        for h in 0..g.heads {
            let dt = delta[t * g.heads + h];
            let alpha = (dt * a[h]).exp();
            for q in 0..p {
                let col = h * p + q;
                let xv = x[t * w + col];
                let s = &mut cur[col * n..(col + 1) * n];
                let mut acc = T::zero();
                for k in 0..n {
                    s[k] = alpha * s[k] + dt * xv * bt[k];
                    acc = acc + s[k] * ct[k];
                }
                y[t * w + col] = acc + d[h] * xv;
            }
        }
        states[t * sl..(t + 1) * sl].copy_from_slice(&cur);
    }
    (y, states)
}

pub struct ScanGrads<T> {
    pub dx: Vec<T>,
    pub ddelta: Vec<T>,
    pub da: Vec<T>,
    pub db: Vec<T>,
    pub dc: Vec<T>,
    pub dd: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn scan_backward<T: Scalar>(
    x: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
    states: &[T],
    gy: &[T],
    g: &ScanGeom,
) -> ScanGrads<T> {
    let (w, n, p) = (g.width(), g.d_state, g.head_dim);
    let sl = g.state_len();
    let zero = T::zero();
    let mut out = ScanGrads {
        dx: vec![zero; x.len()],
        ddelta: vec![zero; delta.len()],
        da: vec![zero; a.len()],
        db: vec![zero; bm.len()],
        dc: vec![zero; cm.len()],
        dd: vec![zero; d.len()],
    };
    // gradient flowing into S_t from later steps, already scaled by alpha_{t+1}
    let mut carry = vec![zero; sl];
    let mut gs = vec![zero; n];
    for t in (0..g.t_len).rev() {
        let bt = &bm[t * n..(t + 1) * n];
        let ct = &cm[t * n..(t + 1) * n];
        let st = &states[t * sl..(t + 1) * sl];
        for h in 0..g.heads {
            let dt = delta[t * g.heads + h];
            let alpha = (dt * a[h]).exp();
            let mut g_alpha = zero;
            let mut g_dt = zero;
            for q in 0..p {
                let col = h * p + q;
                let xv = x[t * w + col];
                let gyv = gy[t * w + col];
                out.dd[h] = out.dd[h] + gyv * xv;
                let mut gx = d[h] * gyv;
                let s_now = &st[col * n..(col + 1) * n];
                let c_carry = &mut carry[col * n..(col + 1) * n];
                for k in 0..n {
                    gs[k] = c_carry[k] + gyv * ct[k];
                    out.dc[t * n + k] = out.dc[t * n + k] + gyv * s_now[k];
                }
                for k in 0..n {
                    let prev = if t > 0 { states[(t - 1) * sl + col * n + k] } else { zero };
                    g_alpha = g_alpha + gs[k] * prev;
                    g_dt = g_dt + gs[k] * xv * bt[k];
                    gx = gx + gs[k] * dt * bt[k];
                    out.db[t * n + k] = out.db[t * n + k] + gs[k] * dt * xv;
                    c_carry[k] = gs[k] * alpha;
                }
                out.dx[t * w + col] = gx;
            }
            out.ddelta[t * g.heads + h] = g_dt + g_alpha * alpha * a[h];
            out.da[h] = out.da[h] + g_alpha * alpha * dt;
        }
    }
    out
}

/// View of an arbitrary-rank shape as `[outer, axis, inner]`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
