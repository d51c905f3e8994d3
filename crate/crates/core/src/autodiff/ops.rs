use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::tensor::{Tensor, VjpFn};
use super::AutodiffError;

type AdResult = Result<Tensor, AutodiffError>;

/// Numpy-style broadcast of two shapes, aligned on trailing dims.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, AutodiffError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(AutodiffError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        };
    }
    Ok(out)
}

/// Row-major strides of `src` aligned to `out`, 0 on broadcast dims.
fn strides_for(src: &[usize], out: &[usize]) -> Vec<usize> {
    let mut contiguous = vec![0usize; src.len()];
    let mut acc = 1usize;
    for d in (0..src.len()).rev() {
        contiguous[d] = acc;
        acc *= src[d];
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    for d in 0..rank {
        if d + src.len() >= rank {
            let ds = d + src.len() - rank;
            strides[d] = if src[ds] == 1 && out[d] != 1 { 0 } else { contiguous[ds] };
        }
    }
    strides
}

/// Visits every element of `shape` in row-major order, handing the linear
/// output index plus both source offsets to `f`. The odometer keeps offsets
/// incremental, so a visit is O(1) amortized.
fn for_each_broadcast(shape: &[usize], ast: &[usize], bst: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for i in 0..n {
        f(i, ai, bi);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += ast[d];
            bi += bst[d];
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
            ai -= ast[d] * shape[d];
            bi -= bst[d] * shape[d];
        }
    }
}

/// Shared plumbing for broadcasting binary ops. `dfa`/`dfb` are the partial
/// derivatives as functions of both operand values.
fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    dfa: fn(f64, f64) -> f64,
    dfb: fn(f64, f64) -> f64,
) -> AdResult {
    if !a.same_tape(b) {
        return Err(AutodiffError::TapeMismatch);
    }
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let ast = strides_for(a.shape(), &out_shape);
    let bst = strides_for(b.shape(), &out_shape);
    let (av, bv) = (a.values_rc(), b.values_rc());
    let mut values = vec![0.0; out_shape.iter().product()];
    for_each_broadcast(&out_shape, &ast, &bst, |i, ai, bi| values[i] = f(av[ai], bv[bi]));

    let need = [a.requires_grad(), b.requires_grad()];
    let (a_numel, b_numel) = (a.numel(), b.numel());
    let shape_c = out_shape.clone();
    let (ast_c, bst_c) = (ast.clone(), bst.clone());
    let (av_c, bv_c) = (Rc::clone(&av), Rc::clone(&bv));
    let vjp: VjpFn = Box::new(move |g: &[f64]| {
        let mut ga = if need[0] { vec![0.0; a_numel] } else { Vec::new() };
        let mut gb = if need[1] { vec![0.0; b_numel] } else { Vec::new() };
        for_each_broadcast(&shape_c, &ast_c, &bst_c, |i, ai, bi| {
            if need[0] {
                ga[ai] += g[i] * dfa(av_c[ai], bv_c[bi]);
            }
            if need[1] {
                gb[bi] += g[i] * dfb(av_c[ai], bv_c[bi]);
            }
        });
        vec![ga, gb]
    });
    Ok(Tensor::make_result(&a.tape_rc(), out_shape, values, vec![a.clone(), b.clone()], vjp))
}

/// Shared plumbing for elementwise unary ops; `df` sees input and output.
fn unary(op: &'static str, t: &Tensor, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
    let _ = op;
    let values: Vec<f64> = t.values().iter().map(|&x| f(x)).collect();
    let xv = t.values_rc();
    let yv = Rc::new(values.clone());
    let need = t.requires_grad();
    let vjp: VjpFn = Box::new(move |g: &[f64]| {
        if !need {
            return vec![Vec::new()];
        }
        vec![g.iter().zip(xv.iter().zip(yv.iter())).map(|(&gi, (&x, &y))| gi * df(x, y)).collect()]
    });
    Tensor::make_result(&t.tape_rc(), t.shape().to_vec(), values, vec![t.clone()], vjp)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = max(x, 0) + log1p(exp(-|x|)); never overflows.
fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

impl Tensor {
    pub fn add(&self, other: &Tensor) -> AdResult {
        binary("add", self, other, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> AdResult {
        binary("sub", self, other, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> AdResult {
        binary("mul", self, other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor) -> AdResult {
        if other.values().iter().any(|&b| b == 0.0) {
            return Err(AutodiffError::DomainError { op: "div", detail: "zero divisor" });
        }
        binary("div", self, other, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Tensor {
        unary("neg", self, |x| -x, |_, _| -1.0)
    }

    /// Multiplies by a compile-time constant (not a tensor).
    pub fn scale(&self, c: f64) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| x * c).collect();
        let need = self.requires_grad();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if need {
                vec![g.iter().map(|&gi| gi * c).collect()]
            } else {
                vec![Vec::new()]
            }
        });
        Tensor::make_result(&self.tape_rc(), self.shape().to_vec(), values, vec![self.clone()], vjp)
    }

    /// Adds a constant to every entry.
    pub fn shift(&self, c: f64) -> Tensor {
        let values: Vec<f64> = self.values().iter().map(|&x| x + c).collect();
        let need = self.requires_grad();
        let vjp: VjpFn =
            Box::new(move |g: &[f64]| if need { vec![g.to_vec()] } else { vec![Vec::new()] });
        Tensor::make_result(&self.tape_rc(), self.shape().to_vec(), values, vec![self.clone()], vjp)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> AdResult {
        if self.values().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::DomainError { op: "log", detail: "requires strictly positive inputs" });
        }
        Ok(unary("log", self, f64::ln, |x, _| 1.0 / x))
    }

    pub fn tanh(&self) -> Tensor {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary("sigmoid", self, stable_sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&self) -> Tensor {
        unary("softplus", self, stable_softplus, |x, _| stable_sigmoid(x))
    }

    /// Standard normal CDF; gradient is the density.
    pub fn std_normal_cdf(&self) -> Tensor {
        unary(
            "std_normal_cdf",
            self,
            |x| 0.5 * (1.0 + libm::erf(x * INV_SQRT_2)),
            |x, _| INV_SQRT_2PI * (-0.5 * x * x).exp(),
        )
    }

    /// `self` is `[..., m, k]`, `rhs` is `[k, n]`; leading dims act as batch.
    pub fn matmul(&self, rhs: &Tensor) -> AdResult {
        if !self.same_tape(rhs) {
            return Err(AutodiffError::TapeMismatch);
        }
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.len() < 2 || rs.len() != 2 || ls[ls.len() - 1] != rs[0] {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", lhs: ls.to_vec(), rhs: rs.to_vec() });
        }
        let (m, k, n) = (ls[ls.len() - 2], ls[ls.len() - 1], rs[1]);
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let mut values = vec![0.0; batch * m * n];
        {
            let bview = ArrayView2::from_shape((k, n), rhs.values()).expect("rhs buffer matches shape");
            for t in 0..batch {
                let a = ArrayView2::from_shape((m, k), &self.values()[t * m * k..(t + 1) * m * k])
                    .expect("lhs buffer matches shape");
                let mut c = ArrayViewMut2::from_shape((m, n), &mut values[t * m * n..(t + 1) * m * n])
                    .expect("out buffer matches shape");
                general_mat_mul(1.0, &a, &bview, 0.0, &mut c);
            }
        }
        let mut out_shape = ls[..ls.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);

        let need = [self.requires_grad(), rhs.requires_grad()];
        let (av, bv) = (self.values_rc(), rhs.values_rc());
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            let mut ga = if need[0] { vec![0.0; batch * m * k] } else { Vec::new() };
            let mut gb = if need[1] { vec![0.0; k * n] } else { Vec::new() };
            let bview = ArrayView2::from_shape((k, n), bv.as_slice()).expect("rhs shape");
            for t in 0..batch {
                let gt = ArrayView2::from_shape((m, n), &g[t * m * n..(t + 1) * m * n]).expect("grad shape");
                if need[0] {
                    let mut gat =
                        ArrayViewMut2::from_shape((m, k), &mut ga[t * m * k..(t + 1) * m * k]).expect("ga shape");
                    general_mat_mul(1.0, &gt, &bview.t(), 0.0, &mut gat);
                }
                if need[1] {
                    let at = ArrayView2::from_shape((m, k), &av[t * m * k..(t + 1) * m * k]).expect("lhs shape");
                    let mut gbt = ArrayViewMut2::from_shape((k, n), gb.as_mut_slice()).expect("gb shape");
                    general_mat_mul(1.0, &at.t(), &gt, 1.0, &mut gbt);
                }
            }
            vec![ga, gb]
        });
        Ok(Tensor::make_result(&self.tape_rc(), out_shape, values, vec![self.clone(), rhs.clone()], vjp))
    }

    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.values().iter().sum();
        let n = self.numel();
        let need = self.requires_grad();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if need {
                vec![vec![g[0]; n]]
            } else {
                vec![Vec::new()]
            }
        });
        Tensor::make_result(&self.tape_rc(), vec![], vec![total], vec![self.clone()], vjp)
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums out one axis.
    pub fn sum_axis(&self, axis: usize) -> AdResult {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::AxisOutOfRange { op: "sum_axis", axis, rank: shape.len() });
        }
        let pre: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let post: usize = shape[axis + 1..].iter().product();
        let mut values = vec![0.0; pre * post];
        let v = self.values();
        for p in 0..pre {
            for a in 0..len {
                let base = (p * len + a) * post;
                let out_base = p * post;
                for q in 0..post {
                    values[out_base + q] += v[base + q];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let need = self.requires_grad();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if !need {
                return vec![Vec::new()];
            }
            let mut gx = vec![0.0; pre * len * post];
            for p in 0..pre {
                for a in 0..len {
                    let base = (p * len + a) * post;
                    let g_base = p * post;
                    for q in 0..post {
                        gx[base + q] = g[g_base + q];
                    }
                }
            }
            vec![gx]
        });
        Ok(Tensor::make_result(&self.tape_rc(), out_shape, values, vec![self.clone()], vjp))
    }

    pub fn mean_axis(&self, axis: usize) -> AdResult {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::AxisOutOfRange { op: "mean_axis", axis, rank: shape.len() });
        }
        let len = shape[axis].max(1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / len))
    }

    pub fn sum_last(&self) -> AdResult {
        let rank = self.shape().len();
        if rank == 0 {
            return Err(AutodiffError::AxisOutOfRange { op: "sum_last", axis: 0, rank });
        }
        self.sum_axis(rank - 1)
    }

    /// Row-max over the last axis as a detached `[..., 1]` constant — the
    /// usual log-sum-exp shift.
    pub fn max_last_keepdim_const(&self) -> Tensor {
        let shape = self.shape();
        let rank = shape.len();
        debug_assert!(rank >= 1, "max_last on a scalar");
        let len = shape[rank - 1];
        let rows = self.numel() / len.max(1);
        let v = self.values();
        let mut values = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * len..(r + 1) * len];
            values.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        let mut out_shape = shape.to_vec();
        out_shape[rank - 1] = 1;
        Tensor::make_result(&self.tape_rc(), out_shape, values, vec![], Box::new(|_| Vec::new()))
    }

    /// Numerically stable `log(sum(exp(x)))` over the last axis.
    pub fn logsumexp_last(&self) -> AdResult {
        let m = self.max_last_keepdim_const();
        let shifted = self.sub(&m)?;
        let s = shifted.exp().sum_last()?;
        let mut squeezed_shape = self.shape().to_vec();
        squeezed_shape.pop();
        let m_squeezed = m.reshape(&squeezed_shape)?;
        s.log()?.add(&m_squeezed)
    }

    /// `x - logsumexp(x)` over the last axis, broadcast back.
    pub fn log_softmax_last(&self) -> AdResult {
        let lse = self.logsumexp_last()?;
        let mut keep = self.shape().to_vec();
        let rank = keep.len();
        keep[rank - 1] = 1;
        self.sub(&lse.reshape(&keep)?)
    }

    /// Same data, new shape (no copy).
    pub fn reshape(&self, shape: &[usize]) -> AdResult {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(AutodiffError::BadBuffer {
                op: "reshape",
                shape: shape.to_vec(),
                expected,
                got: self.numel(),
            });
        }
        let need = self.requires_grad();
        let vjp: VjpFn =
            Box::new(move |g: &[f64]| if need { vec![g.to_vec()] } else { vec![Vec::new()] });
        let values = self.values().to_vec();
        Ok(Tensor::make_result(&self.tape_rc(), shape.to_vec(), values, vec![self.clone()], vjp))
    }

    pub fn unsqueeze(&self, axis: usize) -> AdResult {
        let mut shape = self.shape().to_vec();
        if axis > shape.len() {
            return Err(AutodiffError::AxisOutOfRange { op: "unsqueeze", axis, rank: shape.len() });
        }
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    /// Materialized broadcast to a larger shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> AdResult {
        let out_shape = broadcast_shape("broadcast_to", self.shape(), shape)?;
        if out_shape != shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let ast = strides_for(self.shape(), &out_shape);
        let zeros = vec![0usize; out_shape.len()];
        let v = self.values_rc();
        let mut values = vec![0.0; out_shape.iter().product()];
        for_each_broadcast(&out_shape, &ast, &zeros, |i, ai, _| values[i] = v[ai]);
        let need = self.requires_grad();
        let numel = self.numel();
        let shape_c = out_shape.clone();
        let ast_c = ast.clone();
        let zeros_c = zeros.clone();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if !need {
                return vec![Vec::new()];
            }
            let mut gx = vec![0.0; numel];
            for_each_broadcast(&shape_c, &ast_c, &zeros_c, |i, ai, _| gx[ai] += g[i]);
            vec![gx]
        });
        Ok(Tensor::make_result(&self.tape_rc(), out_shape, values, vec![self.clone()], vjp))
    }

    /// Drops `axis`, keeping the slice at `index`.
    pub fn select(&self, axis: usize, index: usize) -> AdResult {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::AxisOutOfRange { op: "select", axis, rank: shape.len() });
        }
        if index >= shape[axis] {
            return Err(AutodiffError::AxisOutOfRange { op: "select", axis: index, rank: shape[axis] });
        }
        let pre: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let post: usize = shape[axis + 1..].iter().product();
        let v = self.values();
        let mut values = vec![0.0; pre * post];
        for p in 0..pre {
            let src = (p * len + index) * post;
            values[p * post..(p + 1) * post].copy_from_slice(&v[src..src + post]);
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let need = self.requires_grad();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if !need {
                return vec![Vec::new()];
            }
            let mut gx = vec![0.0; pre * len * post];
            for p in 0..pre {
                let dst = (p * len + index) * post;
                gx[dst..dst + post].copy_from_slice(&g[p * post..(p + 1) * post]);
            }
            vec![gx]
        });
        Ok(Tensor::make_result(&self.tape_rc(), out_shape, values, vec![self.clone()], vjp))
    }

    /// Keeps `len` entries of the last axis starting at `start`.
    pub fn slice_last(&self, start: usize, len: usize) -> AdResult {
        let shape = self.shape();
        let rank = shape.len();
        if rank == 0 {
            return Err(AutodiffError::AxisOutOfRange { op: "slice_last", axis: 0, rank });
        }
        let last = shape[rank - 1];
        if start + len > last {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_last",
                lhs: shape.to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = self.numel() / last;
        let v = self.values();
        let mut values = vec![0.0; rows * len];
        for r in 0..rows {
            values[r * len..(r + 1) * len].copy_from_slice(&v[r * last + start..r * last + start + len]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[rank - 1] = len;
        let need = self.requires_grad();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            if !need {
                return vec![Vec::new()];
            }
            let mut gx = vec![0.0; rows * last];
            for r in 0..rows {
                gx[r * last + start..r * last + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            vec![gx]
        });
        Ok(Tensor::make_result(&self.tape_rc(), out_shape, values, vec![self.clone()], vjp))
    }

    /// Concatenates along the last axis; all other dims must agree.
    pub fn concat_last(parts: &[Tensor]) -> AdResult {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat_last",
            lhs: vec![],
            rhs: vec![],
        })?;
        let rank = first.shape().len();
        if rank == 0 {
            return Err(AutodiffError::AxisOutOfRange { op: "concat_last", axis: 0, rank });
        }
        let lead = &first.shape()[..rank - 1];
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            if !p.same_tape(first) {
                return Err(AutodiffError::TapeMismatch);
            }
            if p.shape().len() != rank || &p.shape()[..rank - 1] != lead {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_last",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            lens.push(p.shape()[rank - 1]);
        }
        let total: usize = lens.iter().sum();
        let rows: usize = lead.iter().product();
        let mut values = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &len) in parts.iter().zip(&lens) {
            let v = p.values();
            for r in 0..rows {
                values[r * total + offset..r * total + offset + len]
                    .copy_from_slice(&v[r * len..(r + 1) * len]);
            }
            offset += len;
        }
        let mut out_shape = lead.to_vec();
        out_shape.push(total);
        let need: Vec<bool> = parts.iter().map(Tensor::requires_grad).collect();
        let lens_c = lens.clone();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            let mut out = Vec::with_capacity(lens_c.len());
            let mut offset = 0;
            for (idx, &len) in lens_c.iter().enumerate() {
                if need[idx] {
                    let mut gx = vec![0.0; rows * len];
                    for r in 0..rows {
                        gx[r * len..(r + 1) * len]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + len]);
                    }
                    out.push(gx);
                } else {
                    out.push(Vec::new());
                }
                offset += len;
            }
            out
        });
        Ok(Tensor::make_result(&first.tape_rc(), out_shape, values, parts.to_vec(), vjp))
    }

    /// Stacks equal-shaped tensors along a new axis.
    pub fn stack(parts: &[Tensor], axis: usize) -> AdResult {
        let first = parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "stack",
            lhs: vec![],
            rhs: vec![],
        })?;
        let base = first.shape().to_vec();
        if axis > base.len() {
            return Err(AutodiffError::AxisOutOfRange { op: "stack", axis, rank: base.len() });
        }
        for p in parts {
            if !p.same_tape(first) {
                return Err(AutodiffError::TapeMismatch);
            }
            if p.shape() != base.as_slice() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack",
                    lhs: base.clone(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let count = parts.len();
        let pre: usize = base[..axis].iter().product();
        let post: usize = base[axis..].iter().product();
        let mut values = vec![0.0; pre * count * post];
        for (s, p) in parts.iter().enumerate() {
            let v = p.values();
            for pr in 0..pre {
                let dst = (pr * count + s) * post;
                values[dst..dst + post].copy_from_slice(&v[pr * post..(pr + 1) * post]);
            }
        }
        let mut out_shape = base.clone();
        out_shape.insert(axis, count);
        let need: Vec<bool> = parts.iter().map(Tensor::requires_grad).collect();
        let vjp: VjpFn = Box::new(move |g: &[f64]| {
            (0..count)
                .map(|s| {
                    if !need[s] {
                        return Vec::new();
                    }
                    let mut gx = vec![0.0; pre * post];
                    for pr in 0..pre {
                        let src = (pr * count + s) * post;
                        gx[pr * post..(pr + 1) * post].copy_from_slice(&g[src..src + post]);
                    }
                    gx
                })
                .collect()
        });
        Ok(Tensor::make_result(&first.tape_rc(), out_shape, values, parts.to_vec(), vjp))
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::{Tape, Tensor};
    use approx::assert_relative_eq;

    #[test]
    fn add_broadcasts_trailing_dims() {
        let tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = tape.constant(vec![10.0, 20.0, 30.0], &[3]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.values(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn mul_broadcast_gradients_reduce_correctly() {
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0], &[2, 1]).unwrap();
        let b = tape.leaf(vec![3.0, 4.0, 5.0], &[1, 3]).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        c.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![12.0, 12.0], "sum of the row factors");
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0, 3.0], "sum of the column factors");
    }

    #[test]
    fn matmul_known_values_and_grads() {
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = tape.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
        c.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn matmul_batches_over_leading_dims() {
        let tape = Tape::new();
        let a = tape.constant((0..12).map(|i| i as f64).collect(), &[2, 2, 3]).unwrap();
        let b = tape.constant(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        // row [0,1,2] -> [0*1+1*0+2*1, 0*0+1*1+2*1] = [2, 3]
        assert_eq!(c.values()[..2], [2.0, 3.0]);
        assert_eq!(c.values()[6..], [20.0, 21.0], "last row [9,10,11]");
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let tape = Tape::new();
        let x = tape.leaf(vec![800.0, -800.0, 0.0], &[3]).unwrap();
        let y = x.softplus();
        assert_eq!(y.values()[0], 800.0);
        assert_eq!(y.values()[1], 0.0);
        assert_relative_eq!(y.values()[2], 2.0_f64.ln(), max_relative = 1e-15);
        y.sum_all().backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], 0.0);
        assert_relative_eq!(g[2], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let tape = Tape::new();
        let x = tape.constant(vec![1000.0, 1000.0, -1000.0, 3.0], &[2, 2]).unwrap();
        let y = x.logsumexp_last().unwrap();
        assert_relative_eq!(y.values()[0], 1000.0 + 2.0_f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(y.values()[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn log_softmax_of_single_logit_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(vec![4.2, -1.0], &[2, 1]).unwrap();
        let y = x.log_softmax_last().unwrap();
        assert_eq!(y.values(), &[0.0, 0.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let tape = Tape::new();
        let x = tape.constant(vec![1.0, 0.0], &[2]).unwrap();
        assert!(x.log().is_err());
    }

    #[test]
    fn div_rejects_zero_divisor() {
        let tape = Tape::new();
        let a = tape.constant(vec![1.0], &[1]).unwrap();
        let b = tape.constant(vec![0.0], &[1]).unwrap();
        assert!(a.div(&b).is_err());
    }

    #[test]
    fn select_and_stack_round_trip() {
        let tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0], &[2]).unwrap();
        let b = tape.constant(vec![3.0, 4.0], &[2]).unwrap();
        let s = Tensor::stack(&[a.clone(), b], 0).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        let back = s.select(0, 0).unwrap();
        assert_eq!(back.values(), a.values());
        let col = s.select(1, 1).unwrap();
        assert_eq!(col.values(), &[2.0, 4.0]);
    }

    #[test]
    fn concat_and_slice_round_trip_with_grads() {
        let tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = tape.leaf(vec![5.0, 6.0], &[2, 1]).unwrap();
        let c = Tensor::concat_last(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.values(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let sliced = c.slice_last(2, 1).unwrap();
        assert_eq!(sliced.values(), b.values());
        sliced.scale(2.0).sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0; 4], "slice skipped the a-part");
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn sum_axis_middle() {
        let tape = Tape::new();
        let x = tape.constant((1..=8).map(|i| i as f64).collect(), &[2, 2, 2]).unwrap();
        let s = x.sum_axis(1).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.values(), &[4.0, 6.0, 12.0, 14.0]);
    }

    #[test]
    fn broadcast_to_grad_counts_uses() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0], &[1]).unwrap();
        let y = x.broadcast_to(&[5]).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
    }

    #[test]
    fn linearity_of_reverse_mode() {
        let grad_of = |a: f64, b: f64| -> Vec<f64> {
            let tape = Tape::new();
            let x = tape.leaf(vec![0.7, -0.3], &[2]).unwrap();
            let f = x.tanh().sum_all();
            let g = x.exp().sum_all();
            let loss = f.scale(a).add(&g.scale(b)).unwrap();
            loss.backward().unwrap();
            x.grad().unwrap()
        };
        let combined = grad_of(2.0, 3.0);
        let fa = grad_of(1.0, 0.0);
        let fb = grad_of(0.0, 1.0);
        for i in 0..2 {
            assert_relative_eq!(combined[i], 2.0 * fa[i] + 3.0 * fb[i], max_relative = 1e-12);
        }
    }
}
