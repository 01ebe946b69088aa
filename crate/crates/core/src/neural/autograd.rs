//! Reverse-mode automatic differentiation on a per-example tape.

use rand::Rng;

use super::ctc::ctc_loss_and_grad;
use super::tensor::{Mat, Scalar};
use super::NeuralError;

const LN_EPS: f64 = 1e-5;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    names: Vec<String>,
    tensors: Vec<Mat<T>>,
}

impl<T> Default for Parameters<T> {
    fn default() -> Self {
        Parameters {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Mat<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Mat<T> {
        &mut self.tensors[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Mat<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tensors(&self) -> &[Mat<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::all_finite)
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
        }
    }

    /// True when names and shapes agree.
    pub fn same_layout<U: Scalar>(&self, other: &Parameters<U>) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients(self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect())
    }
}

/// Gradient buffers shaped like a [`Parameters`] set.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Mat<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|m| m.data.iter())
            .map(|v| {
                let v = v.to_f64().unwrap();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for m in &mut self.0 {
            m.scale(s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Mat<T>),
    Param(usize),
}

enum Op<T> {
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MulConst(Var, Mat<T>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Mat<T>> },
    Gather { table: Var, ids: Vec<u32> },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    /// Scalar loss whose gradient with respect to `x` is precomputed.
    Loss { x: Var, grad: Mat<T> },
    Combine(Vec<(Var, T)>),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations on one example; parameters are borrowed, not copied.
pub struct Tape<'p, T: Scalar> {
    params: &'p Parameters<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p Parameters<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p Parameters<T> {
        self.params
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data[0]
    }

    /// A constant that receives no gradient.
    pub fn input(&mut self, m: Mat<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(m),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = Mat::matmul(self.value(a), ta, self.value(b), tb);
        self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shapes");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        assert_eq!(r.cols, self.value(a).cols, "add_row width");
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for chunk in out.data.chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += *b;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `x W + b` with `W` stored as `in x out`.
    pub fn linear(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, false, w, false);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    /// Inverted dropout; the identity when `p` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let (r, c) = self.value(a).shape();
        let mask = Mat::from_fn(r, c, |_, _| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let mut out = self.value(a).clone();
        for (o, m) in out.data.iter_mut().zip(&mask.data) {
            *o *= *m;
        }
        self.push(out, Op::MulConst(a, mask), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: usize, bias: usize) -> Var {
        let g = self.param(gain);
        let b = self.param(bias);
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::from_usize(cols).unwrap();
        let eps = T::from_f64_lossy(LN_EPS);
        let mut xhat = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            rstd.push(s);
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let gv = self.value(g);
        let bv = self.value(b);
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, &gg), &bb) in out.row_mut(r).iter_mut().zip(&gv.data).zip(&bv.data) {
                *o = *o * gg + bb;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain: g,
                bias: b,
                xhat,
                rstd,
            },
            &[x, g, b],
        )
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values. With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qm.shape();
        let tk = km.rows;
        assert_eq!(km.cols, d);
        assert_eq!(vm.shape(), (tk, d));
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut out = Mat::zeros(tq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut s = Mat::zeros(tq, tk);
            T::gemm(
                tq,
                dh,
                tk,
                scale,
                &qm.data[h * dh..],
                d as isize,
                1,
                &km.data[h * dh..],
                1,
                d as isize,
                T::zero(),
                &mut s.data,
                tk as isize,
                1,
            );
            for i in 0..tq {
                let row = s.row_mut(i);
                let visible = if causal { (i + 1).min(tk) } else { tk };
                let max = row[..visible].iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for (j, x) in row.iter_mut().enumerate() {
                    if j < visible {
                        *x = (*x - max).exp();
                        sum += *x;
                    } else {
                        *x = T::zero();
                    }
                }
                for x in row.iter_mut() {
                    *x = *x / sum;
                }
            }
            T::gemm(
                tq,
                tk,
                dh,
                T::one(),
                &s.data,
                tk as isize,
                1,
                &vm.data[h * dh..],
                d as isize,
                1,
                T::zero(),
                &mut out.data[h * dh..],
                d as isize,
                1,
            );
            probs.push(s);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Attention probabilities of the most recent attention node `v`.
    pub fn attention_probs(&self, v: Var) -> Option<&[Mat<T>]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: usize, ids: &[u32]) -> Var {
        let t = self.param(table);
        let tv = self.value(t);
        let mut out = Mat::zeros(ids.len(), tv.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(id as usize));
        }
        self.push(
            out,
            Op::Gather {
                table: t,
                ids: ids.to_vec(),
            },
            &[t],
        )
    }

    /// Sliding windows over rows: output row `t` concatenates input rows
    /// `t*stride - pad .. t*stride - pad + kernel`, zero outside the input.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let out_rows = unfold_len(n, kernel, stride, pad);
        let mut out = Mat::zeros(out_rows, kernel * c);
        for t in 0..out_rows {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < n {
                    out.row_mut(t)[j * c..(j + 1) * c].copy_from_slice(xv.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        )
    }

    /// Summed label-smoothed cross-entropy of `logits` rows against
    /// `targets`: `(1 - eps) * nll + eps / V * sum_v(-log p_v)` per row.
    /// Rows whose target equals `ignore` contribute nothing.
    pub fn label_smoothed_nll(&mut self, logits: Var, targets: &[u32], eps: f64, ignore: Option<u32>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let vsize = lv.cols;
        let eps_t = T::from_f64_lossy(eps);
        let uniform = eps_t / T::from_usize(vsize).unwrap();
        let mut grad = Mat::zeros(lv.rows, vsize);
        let mut total = T::zero();
        for (r, &y) in targets.iter().enumerate() {
            if Some(y) == ignore {
                continue;
            }
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            let mut sum_neg = T::zero();
            for (g, &x) in grad.row_mut(r).iter_mut().zip(row) {
                let lp = x - lse;
                sum_neg -= lp;
                *g = lp.exp() - uniform;
            }
            let nll = lse - row[y as usize];
            grad.row_mut(r)[y as usize] -= T::one() - eps_t;
            total += (T::one() - eps_t) * nll + uniform * sum_neg;
        }
        self.push(Mat::scalar(total), Op::Loss { x: logits, grad }, &[logits])
    }

    /// CTC negative log-likelihood of `target` given unnormalized `logits`.
    pub fn ctc(&mut self, logits: Var, target: &[u32], blank: u32) -> Result<Var, NeuralError> {
        let (loss, grad) = ctc_loss_and_grad(self.value(logits), target, blank)?;
        Ok(self.push(Mat::scalar(loss), Op::Loss { x: logits, grad }, &[logits]))
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, T)]) -> Var {
        let total = terms
            .iter()
            .map(|&(v, w)| self.scalar(v) * w)
            .fold(T::zero(), |a, b| a + b);
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Mat::scalar(total), Op::Combine(terms.to_vec()), &inputs)
    }

    /// Backpropagates from scalar `loss`, adding parameter gradients to `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut g: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.0[*id].add_assign(&dy),
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let da = if *ta {
                            Mat::matmul(bv, *tb, &dy, true)
                        } else {
                            Mat::matmul(&dy, false, bv, !*tb)
                        };
                        self.acc(&mut g, *a, da);
                    }
                    if self.needs(*b) {
                        let db = if *tb {
                            Mat::matmul(&dy, true, av, *ta)
                        } else {
                            Mat::matmul(av, !*ta, &dy, false)
                        };
                        self.acc(&mut g, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        self.acc(&mut g, *b, dy.clone());
                    }
                    self.acc(&mut g, *a, dy);
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let mut dr = Mat::zeros(1, dy.cols);
                        for chunk in dy.data.chunks(dy.cols) {
                            for (o, v) in dr.data.iter_mut().zip(chunk) {
                                *o += *v;
                            }
                        }
                        self.acc(&mut g, *row, dr);
                    }
                    self.acc(&mut g, *a, dy);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc(&mut g, *a, dy.map(|v| v * s));
                }
                Op::Relu(a) => {
                    let out = self.value(Var(i));
                    let mut da = dy;
                    for (d, &o) in da.data.iter_mut().zip(&out.data) {
                        if o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    self.acc(&mut g, *a, da);
                }
                Op::MulConst(a, mask) => {
                    let mut da = dy;
                    for (d, &m) in da.data.iter_mut().zip(&mask.data) {
                        *d *= m;
                    }
                    self.acc(&mut g, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = dy.shape();
                    let n = T::from_usize(cols).unwrap();
                    let mut dg = Mat::zeros(1, cols);
                    let mut db = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let dyr = dy.row(r);
                        let xh = xhat.row(r);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            dg.data[c] += dyr[c] * xh[c];
                            db.data[c] += dyr[c];
                            let d = dyr[c] * gv.data[c];
                            sum_d += d;
                            sum_dx += d * xh[c];
                        }
                        let s = rstd[r] / n;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let d = dyr[c] * gv.data[c];
                            *o = s * (n * d - sum_d - xh[c] * sum_dx);
                        }
                    }
                    self.acc(&mut g, *gain, dg);
                    self.acc(&mut g, *bias, db);
                    self.acc(&mut g, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *heads, probs, &dy);
                    self.acc(&mut g, *q, dq);
                    self.acc(&mut g, *k, dk);
                    self.acc(&mut g, *v, dv);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Mat::zeros(tv.rows, tv.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in dt.row_mut(id as usize).iter_mut().zip(dy.row(r)) {
                            *o += *v;
                        }
                    }
                    self.acc(&mut g, *table, dt);
                }
                Op::Unfold {
                    x,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (n, c) = self.value(*x).shape();
                    let mut dx = Mat::zeros(n, c);
                    for t in 0..dy.rows {
                        for j in 0..*kernel {
                            let src = (t * stride + j) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < n {
                                let d = &dy.row(t)[j * c..(j + 1) * c];
                                for (o, v) in dx.row_mut(src as usize).iter_mut().zip(d) {
                                    *o += *v;
                                }
                            }
                        }
                    }
                    self.acc(&mut g, *x, dx);
                }
                Op::Loss { x, grad } => {
                    let s = dy.data[0];
                    self.acc(&mut g, *x, grad.map(|v| v * s));
                }
                Op::Combine(terms) => {
                    let s = dy.data[0];
                    for &(v, w) in terms {
                        if self.needs(v) {
                            self.acc(&mut g, v, Mat::scalar(s * w));
                        }
                    }
                }
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, g: &mut [Option<Mat<T>>], v: Var, d: Mat<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut g[v.0] {
            Some(m) => m.add_assign(&d),
            slot => *slot = Some(d),
        }
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[Mat<T>],
        dy: &Mat<T>,
    ) -> (Mat<T>, Mat<T>, Mat<T>) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qm.shape();
        let tk = km.rows;
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dq = Mat::zeros(tq, d);
        let mut dk = Mat::zeros(tk, d);
        let mut dv = Mat::zeros(tk, d);
        let mut dp = Mat::zeros(tq, tk);
        for (h, p) in probs.iter().enumerate() {
            // dV_h = P^T dY_h
            T::gemm(
                tk,
                tq,
                dh,
                T::one(),
                &p.data,
                1,
                tk as isize,
                &dy.data[h * dh..],
                d as isize,
                1,
                T::zero(),
                &mut dv.data[h * dh..],
                d as isize,
                1,
            );
            // dP = dY_h V_h^T
            T::gemm(
                tq,
                dh,
                tk,
                T::one(),
                &dy.data[h * dh..],
                d as isize,
                1,
                &vm.data[h * dh..],
                1,
                d as isize,
                T::zero(),
                &mut dp.data,
                tk as isize,
                1,
            );
            // dS = P * (dP - rowsum(dP * P))
            for i in 0..tq {
                let pr = p.row(i);
                let dr = dp.row_mut(i);
                let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot);
                }
            }
            // dQ_h = scale dS K_h ; dK_h = scale dS^T Q_h
            T::gemm(
                tq,
                tk,
                dh,
                scale,
                &dp.data,
                tk as isize,
                1,
                &km.data[h * dh..],
                d as isize,
                1,
                T::zero(),
                &mut dq.data[h * dh..],
                d as isize,
                1,
            );
            T::gemm(
                tk,
                tq,
                dh,
                scale,
                &dp.data,
                1,
                tk as isize,
                &qm.data[h * dh..],
                d as isize,
                1,
                T::zero(),
                &mut dk.data[h * dh..],
                d as isize,
                1,
            );
        }
        (dq, dk, dv)
    }
}

pub fn unfold_len(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if n + 2 * pad < kernel {
        0
    } else {
        (n + 2 * pad - kernel) / stride + 1
    }
}

pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

pub fn log_softmax_rows<T: Scalar>(m: &Mat<T>) -> Mat<T> {
    let mut out = m.clone();
    for r in 0..m.rows {
        let lse = log_sum_exp(m.row(r));
        for v in out.row_mut(r) {
            *v = *v - lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut crate::rng::Prng) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    /// Finite-difference check of every parameter entry of a small graph.
    fn check<F>(params: &Parameters<f64>, f: F)
    where
        F: Fn(&mut Tape<f64>) -> Var,
    {
        let mut grads = params.zero_grads();
        {
            let mut t = Tape::new(params);
            let l = f(&mut t);
            t.backward(l, &mut grads);
        }
        let h = 1e-6;
        for id in 0..params.len() {
            for e in 0..params.get(id).len() {
                let mut p = params.clone();
                p.get_mut(id).data[e] += h;
                let up = {
                    let mut t = Tape::new(&p);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                p.get_mut(id).data[e] -= 2.0 * h;
                let down = {
                    let mut t = Tape::new(&p);
                    let l = f(&mut t);
                    t.scalar(l)
                };
                let num = (up - down) / (2.0 * h);
                let ana = grads.0[id].data[e];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "{} [{e}]: numeric {num} analytic {ana}",
                    params.name(id)
                );
            }
        }
    }

    #[test]
    fn gradients_of_core_ops() {
        let mut r = seeded(3);
        let mut p = Parameters::new();
        let x = p.push("x", randn(5, 4, &mut r));
        let w = p.push("w", randn(4, 4, &mut r));
        let b = p.push("b", randn(1, 4, &mut r));
        let g = p.push("g", randn(1, 4, &mut r));
        let e = p.push("e", randn(6, 4, &mut r));
        check(&p, |t| {
            let xv = t.param(x);
            let y = t.linear(xv, w, b);
            let y = t.relu(y);
            let y = t.layer_norm(y, g, b);
            let emb = t.gather(e, &[1, 3, 3, 0, 5]);
            let s = t.add(y, emb);
            let s = t.scale(s, 0.7);
            let ev = t.param(e);
            let logits = t.matmul(s, false, ev, true);
            t.label_smoothed_nll(logits, &[0, 2, 4, 5, 1], 0.1, Some(4))
        });
    }

    #[test]
    fn gradients_of_attention_and_unfold() {
        let mut r = seeded(4);
        let mut p = Parameters::new();
        let q = p.push("q", randn(3, 4, &mut r));
        let k = p.push("k", randn(5, 4, &mut r));
        let v = p.push("v", randn(5, 4, &mut r));
        let w = p.push("w", randn(12, 6, &mut r));
        check(&p, |t| {
            let (qv, kv, vv) = (t.param(q), t.param(k), t.param(v));
            let a = t.attention(qv, kv, vv, 2, false);
            let c = t.attention(kv, kv, vv, 2, true);
            let u = t.unfold(c, 3, 2, 1);
            let wv = t.param(w);
            let out = t.matmul(u, false, wv, false);
            let l1 = t.label_smoothed_nll(a, &[0, 3, 1], 0.0, None);
            let l2 = t.label_smoothed_nll(out, &[5, 0, 2], 0.2, None);
            t.combine(&[(l1, 0.3), (l2, 1.1)])
        });
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut r = seeded(5);
        let mut p = Parameters::new();
        let q = p.push("q", randn(4, 8, &mut r));
        let mut t = Tape::new(&p);
        let qv = t.param(q);
        let a = t.attention(qv, qv, qv, 2, true);
        for m in t.attention_probs(a).unwrap() {
            for i in 0..m.rows {
                let s: f64 = m.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(m.row(i)[i + 1..].iter().all(|&x| x == 0.0));
            }
        }
    }
}
