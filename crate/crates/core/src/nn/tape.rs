use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` only for parameters, whose values live in the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Recorded forward computation over a borrowed [`ParamStore`].
///
/// Operations panic on shape mismatches between recorded values; public model
/// entry points validate their inputs before recording anything.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.store.value(*id),
            _ => self.nodes[v.0].value.as_ref().expect("recorded value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, inner, c) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(inner, bv.rows(), "matmul inner dimension");
        let mut out = vec![0.0; r * c];
        matmul_acc(av.data(), bv.data(), &mut out, r, inner, c);
        let t = Tensor::matrix(r, c, out).expect("matmul shape");
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), t, ng)
    }

    /// Adds a `[1, c]` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let c = av.cols();
        assert_eq!(c, bv.len(), "bias width");
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += *b;
            }
        }
        let t = Tensor::matrix(av.rows(), c, out).expect("bias shape");
        let ng = self.needs(a) || self.needs(bias);
        self.push(Op::AddBias(a, bias), t, ng)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise operand sizes");
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::matrix(av.rows(), av.cols(), out).expect("elementwise shape");
        let ng = self.needs(a) || self.needs(b);
        self.push(op, t, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Scales each row of `a` (`[r, c]`) by the matching entry of `w` (`[r, 1]`).
    pub fn mul_col(&mut self, a: Var, w: Var) -> Var {
        let (av, wv) = (self.value(a), self.value(w));
        let c = av.cols();
        assert_eq!(av.rows(), wv.len(), "mul_col rows");
        let mut out = av.data().to_vec();
        for (row, s) in out.chunks_mut(c).zip(wv.data()) {
            for o in row.iter_mut() {
                *o *= *s;
            }
        }
        let t = Tensor::matrix(av.rows(), c, out).expect("mul_col shape");
        let ng = self.needs(a) || self.needs(w);
        self.push(Op::MulCol(a, w), t, ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::matrix(av.rows(), av.cols(), out).expect("map shape");
        let ng = self.needs(a);
        self.push(op, t, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddConst(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, math::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, math::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s: f64 = av.data().iter().sum::<f64>() / av.len() as f64;
        let ng = self.needs(a);
        self.push(Op::Mean(a), Tensor::scalar(s), ng)
    }

    /// `[r, c] -> [r, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let out = av.data().chunks(c).map(|r| r.iter().sum()).collect();
        let t = Tensor::matrix(av.rows(), 1, out).expect("row_sum shape");
        let ng = self.needs(a);
        self.push(Op::RowSum(a), t, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols rows");
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(pv.row_slice(r));
            }
            offset += w;
        }
        let t = Tensor::matrix(rows, total, out).expect("concat shape");
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(Op::ConcatCols(parts.to_vec()), t, ng)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let (rows, c) = (av.rows(), av.cols());
        assert!(start < end && end <= c, "slice_cols range");
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&av.row_slice(r)[start..end]);
        }
        let t = Tensor::matrix(rows, w, out).expect("slice shape");
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), t, ng)
    }

    /// Row `i` of the result is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(av.row_slice(i));
        }
        let t = Tensor::matrix(idx.len(), c, out).expect("gather shape");
        let ng = self.needs(a);
        self.push(Op::GatherRows(a, idx), t, ng)
    }

    /// Sums rows of `a` into `segments` output rows: row `i` goes to `seg[i]`.
    pub fn segment_sum(&mut self, a: Var, seg: Vec<usize>, segments: usize) -> Var {
        let av = self.value(a);
        let c = av.cols();
        assert_eq!(seg.len(), av.rows(), "segment ids per row");
        let mut out = vec![0.0; segments * c];
        for (r, &s) in seg.iter().enumerate() {
            for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(av.row_slice(r)) {
                *o += *v;
            }
        }
        let t = Tensor::matrix(segments, c, out).expect("segment shape");
        let ng = self.needs(a);
        self.push(Op::SegmentSum(a, seg), t, ng)
    }

    /// Softmax of the `[r, 1]` column `a` taken separately within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Vec<usize>, segments: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols(), 1, "segment_softmax expects a column");
        assert_eq!(seg.len(), av.rows(), "segment ids per row");
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (v, &s) in av.data().iter().zip(&seg) {
            if *v > max[s] {
                max[s] = *v;
            }
        }
        let mut out: Vec<f64> = av
            .data()
            .iter()
            .zip(&seg)
            .map(|(v, &s)| math::exp(*v - max[s]))
            .collect();
        let mut denom = vec![0.0; segments];
        for (e, &s) in out.iter().zip(&seg) {
            denom[s] += *e;
        }
        for (e, &s) in out.iter_mut().zip(&seg) {
            *e /= denom[s];
        }
        let t = Tensor::matrix(seg.len(), 1, out).expect("softmax shape");
        let ng = self.needs(a);
        self.push(Op::SegmentSoftmax(a, seg, segments), t, ng)
    }

    /// Reverse-mode sweep from a scalar `loss`; returns per-parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.len()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let y = self.value(Var(i));
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut out.grads[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (r, inner, c) = (av.rows(), av.cols(), bv.cols());
                    if self.needs(*a) {
                        let ga = self.grad_slot(&mut grads, *a);
                        matmul_bt_acc(g.data(), bv.data(), ga.data_mut(), r, inner, c);
                    }
                    if self.needs(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        matmul_at_acc(av.data(), g.data(), gb.data_mut(), r, inner, c);
                    }
                }
                Op::AddBias(a, b) => {
                    if self.needs(*a) {
                        self.grad_slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.needs(*b) {
                        let c = g.cols();
                        let gb = self.grad_slot(&mut grads, *b);
                        for row in g.data().chunks(c) {
                            for (o, v) in gb.data_mut().iter_mut().zip(row) {
                                *o += *v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        self.grad_slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.needs(*b) {
                        self.grad_slot(&mut grads, *b).add_assign(&g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        self.grad_slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.needs(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                            *o -= *v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.value(*b);
                        let ga = self.grad_slot(&mut grads, *a);
                        for ((o, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += gv * x;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.value(*a);
                        let gb = self.grad_slot(&mut grads, *b);
                        for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += gv * x;
                        }
                    }
                }
                Op::MulCol(a, w) => {
                    let c = g.cols();
                    if self.needs(*a) {
                        let wv = self.value(*w);
                        let ga = self.grad_slot(&mut grads, *a);
                        for ((orow, grow), s) in ga.data_mut().chunks_mut(c).zip(g.data().chunks(c)).zip(wv.data()) {
                            for (o, gv) in orow.iter_mut().zip(grow) {
                                *o += gv * s;
                            }
                        }
                    }
                    if self.needs(*w) {
                        let av = self.value(*a);
                        let gw = self.grad_slot(&mut grads, *w);
                        for ((o, grow), arow) in gw
                            .data_mut()
                            .iter_mut()
                            .zip(g.data().chunks(c))
                            .zip(av.data().chunks(c))
                        {
                            *o += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * s;
                    }
                }
                Op::AddConst(a) => {
                    self.grad_slot(&mut grads, *a).add_assign(&g);
                }
                Op::Tanh(a) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Exp(a) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv;
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((o, gv), x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += 2.0 * gv * x;
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let ga = self.grad_slot(&mut grads, *a);
                    for o in ga.data_mut() {
                        *o += s;
                    }
                }
                Op::Mean(a) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    let s = g.data()[0] / ga.len() as f64;
                    for o in ga.data_mut() {
                        *o += s;
                    }
                }
                Op::RowSum(a) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    let c = ga.cols();
                    for (row, s) in ga.data_mut().chunks_mut(c).zip(g.data()) {
                        for o in row {
                            *o += *s;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.needs(*p) {
                            let gp = self.grad_slot(&mut grads, *p);
                            for (r, row) in gp.data_mut().chunks_mut(w).enumerate() {
                                for (o, v) in row
                                    .iter_mut()
                                    .zip(&g.data()[r * total + offset..r * total + offset + w])
                                {
                                    *o += *v;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let w = g.cols();
                    let ga = self.grad_slot(&mut grads, *a);
                    let c = ga.cols();
                    for (r, grow) in g.data().chunks(w).enumerate() {
                        for (o, v) in ga.data_mut()[r * c + start..r * c + start + w].iter_mut().zip(grow) {
                            *o += *v;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let c = g.cols();
                    let ga = self.grad_slot(&mut grads, *a);
                    for (grow, &i) in g.data().chunks(c).zip(idx) {
                        for (o, v) in ga.data_mut()[i * c..(i + 1) * c].iter_mut().zip(grow) {
                            *o += *v;
                        }
                    }
                }
                Op::SegmentSum(a, seg) => {
                    let c = g.cols();
                    let ga = self.grad_slot(&mut grads, *a);
                    for (orow, &s) in ga.data_mut().chunks_mut(c).zip(seg) {
                        for (o, v) in orow.iter_mut().zip(&g.data()[s * c..(s + 1) * c]) {
                            *o += *v;
                        }
                    }
                }
                Op::SegmentSoftmax(a, seg, segments) => {
                    // d x_i = y_i (g_i - sum_{j in seg(i)} g_j y_j)
                    let mut dot = vec![0.0; *segments];
                    for ((gv, yv), &s) in g.data().iter().zip(y.data()).zip(seg) {
                        dot[s] += gv * yv;
                    }
                    let ga = self.grad_slot(&mut grads, *a);
                    for (((o, gv), yv), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()).zip(seg) {
                        *o += yv * (gv - dot[s]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        let template = self.value(v);
        grads[v.0].get_or_insert_with(|| Tensor::zeros_like(template))
    }
}
