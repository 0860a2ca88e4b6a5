//! Reverse-mode tape over row-major matrices.
//!
//! Every value is a dense `rows × cols` matrix; scalars are `1 × 1`. Nodes
//! record the operation that produced them, and [`Tape::backward`] walks the
//! record in reverse, skipping every node that no gradient-requiring leaf
//! feeds into.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data does not match its shape");
        Mat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn scalar(v: F) -> Self {
        Mat::new(1, 1, vec![v])
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Mat<F>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    /// Sub-block `[offset, offset + rows·cols)` of a flat `1 × P` node, read
    /// as a `rows × cols` matrix.
    View(Var, usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ScaleRows(Var, Vec<F>),
    Silu(Var),
    Softplus(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SumCols(Var),
    /// Row `i` of the output depends on row `i` of the input through the
    /// `cols_out × cols_in` Jacobian stored at `jac[i]`.
    RowLinear(Var, Vec<F>),
}

#[derive(Debug)]
struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Mat<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but materializes zeros of the node's shape.
    pub fn get_or_zeros(&self, tape: &Tape<F>, v: Var) -> Mat<F> {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.shape(v);
            Mat::zeros(r, c)
        })
    }
}

fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes.borrow()[v.0].value;
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> Mat<F> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Read a node's value without cloning.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Mat<F>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> F {
        let nodes = self.nodes.borrow();
        let m = &nodes[v.0].value;
        assert!(m.rows == 1 && m.cols == 1, "not a scalar node");
        m.data[0]
    }

    /// A differentiable input (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Identity on values with an exactly zero derivative.
    pub fn stop_gradient(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant(value)
    }

    fn unary(&self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let value = self.with_value(a, |m| Mat::new(m.rows, m.cols, m.data.iter().map(|&x| f(x)).collect()));
        let g = self.needs(a);
        self.push(value, op, g)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Contract(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            Mat::new(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect())
        };
        let g = self.needs(a) || self.needs(b);
        self.push(value, op, g)
    }

    pub fn view(&self, flat: Var, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let src = &nodes[flat.0].value;
            if src.rows != 1 || offset + rows * cols > src.cols {
                return Err(Error::Contract("view out of bounds of a flat 1 × P node".into()));
            }
            Mat::new(rows, cols, src.data[offset..offset + rows * cols].to_vec())
        };
        let g = self.needs(flat);
        Ok(self.push(value, Op::View(flat, offset), g))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.cols != y.rows {
                return Err(Error::Contract(format!(
                    "matmul: {}×{} by {}×{}",
                    x.rows, x.cols, y.rows, y.cols
                )));
            }
            let mut out = Mat::zeros(x.rows, y.cols);
            F::gemm(x.rows, x.cols, y.cols, F::one(), &x.data, false, &y.data, false, F::zero(), &mut out.data);
            out
        };
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&self, a: Var, bias: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, b) = (&nodes[a.0].value, &nodes[bias.0].value);
            if b.rows != 1 || b.cols != x.cols {
                return Err(Error::Contract("add_row: bias must be 1 × cols".into()));
            }
            let mut out = x.clone();
            for r in 0..out.rows {
                for (o, &v) in out.row_mut(r).iter_mut().zip(&b.data) {
                    *o += v;
                }
            }
            out
        };
        let g = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(a, bias), g))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, s: F) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    /// Multiplies row `i` of `a` by the constant `s[i]`.
    pub fn scale_rows(&self, a: Var, s: &[F]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if s.len() != x.rows {
                return Err(Error::Contract("scale_rows: one factor per row".into()));
            }
            let mut out = x.clone();
            for (r, &f) in s.iter().enumerate() {
                out.row_mut(r).iter_mut().for_each(|v| *v *= f);
            }
            out
        };
        let g = self.needs(a);
        Ok(self.push(value, Op::ScaleRows(a, s.to_vec()), g))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Var {
        self.unary(a, silu, Op::Silu(a))
    }

    /// `ln(1 + eˣ)`.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.rows;
            if parts.iter().any(|p| nodes[p.0].value.rows != rows) {
                return Err(Error::Contract("concat_cols: row counts differ".into()));
            }
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.cols).sum();
            let mut out = Mat::zeros(rows, cols);
            for r in 0..rows {
                let mut c0 = 0;
                for p in parts {
                    let m = &nodes[p.0].value;
                    out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
                    c0 += m.cols;
                }
            }
            out
        };
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), g))
    }

    /// Rows `idx[0], idx[1], …` of `table`.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].value;
            if idx.iter().any(|&i| i >= t.rows) {
                return Err(Error::Contract("gather_rows: index out of range".into()));
            }
            let mut out = Mat::zeros(idx.len(), t.cols);
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(t.row(i));
            }
            out
        };
        let g = self.needs(table);
        Ok(self.push(value, Op::GatherRows(table, idx.to_vec()), g))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.with_value(a, |m| m.data.iter().copied().sum());
        let g = self.needs(a);
        self.push(Mat::scalar(s), Op::Sum(a), g)
    }

    /// Row sums, as an `rows × 1` node.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = self.with_value(a, |m| Mat::new(m.rows, 1, (0..m.rows).map(|r| m.row(r).iter().copied().sum()).collect()));
        let g = self.needs(a);
        self.push(value, Op::SumCols(a), g)
    }

    /// Custom op whose output values are supplied by the caller along with
    /// the per-row Jacobians `∂out_i/∂in_i` (each `cols_out × cols_in`,
    /// row-major, concatenated over rows).
    pub fn row_linear(&self, input: Var, value: Mat<F>, jacobians: Vec<F>) -> Result<Var> {
        let (r, c_in) = self.shape(input);
        if value.rows != r || jacobians.len() != r * value.cols * c_in {
            return Err(Error::Contract("row_linear: value or Jacobian shape mismatch".into()));
        }
        let g = self.needs(input);
        Ok(self.push(value, Op::RowLinear(input, jacobians), g))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.0].value;
        if out.rows != 1 || out.cols != 1 {
            return Err(Error::Contract(format!(
                "gradient requested of a {}×{} node; the loss must be scalar",
                out.rows, out.cols
            )));
        }
        let mut grads: Vec<Option<Mat<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(F::one()));
        let accumulate = |grads: &mut Vec<Option<Mat<F>>>, v: Var, g: Mat<F>| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::View(flat, offset) => {
                    if nodes[flat.0].needs_grad {
                        let cols = nodes[flat.0].value.cols;
                        let slot = grads[flat.0].get_or_insert_with(|| Mat::zeros(1, cols));
                        for (d, &s) in slot.data[*offset..*offset + g.data.len()].iter_mut().zip(&g.data) {
                            *d += s;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let mut ga = Mat::zeros(x.rows, x.cols);
                        F::gemm(g.rows, g.cols, y.rows, F::one(), &g.data, false, &y.data, true, F::zero(), &mut ga.data);
                        accumulate(&mut grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = Mat::zeros(y.rows, y.cols);
                        F::gemm(x.cols, x.rows, g.cols, F::one(), &x.data, true, &g.data, false, F::zero(), &mut gb.data);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, bias) => {
                    if nodes[bias.0].needs_grad {
                        let mut gb = Mat::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (d, &s) in gb.data.iter_mut().zip(g.row(r)) {
                                *d += s;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = Mat::new(g.rows, g.cols, g.data.iter().map(|&v| -v).collect());
                    accumulate(&mut grads, *b, neg);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].needs_grad {
                        let ga = Mat::new(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(&s, &v)| s * v).collect());
                        accumulate(&mut grads, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let gb = Mat::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(&s, &v)| s * v).collect());
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, s) => {
                    let ga = Mat::new(g.rows, g.cols, g.data.iter().map(|&v| *s * v).collect());
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScaleRows(a, s) => {
                    let mut ga = g;
                    for (r, &f) in s.iter().enumerate() {
                        ga.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Silu(a) | Op::Softplus(a) | Op::Square(a) => {
                    let x = &nodes[a.0].value;
                    let deriv: fn(F) -> F = match node.op {
                        Op::Silu(_) => |x| {
                            let s = sigmoid(x);
                            s * (F::one() + x * (F::one() - s))
                        },
                        Op::Softplus(_) => sigmoid,
                        _ => |x| x + x,
                    };
                    let ga = Mat::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(&s, &v)| s * deriv(v)).collect());
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = nodes[p.0].value.cols;
                        if nodes[p.0].needs_grad {
                            let mut gp = Mat::zeros(g.rows, cols);
                            for r in 0..g.rows {
                                gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                            }
                            accumulate(&mut grads, *p, gp);
                        }
                        c0 += cols;
                    }
                }
                Op::GatherRows(table, idx) => {
                    let t = &nodes[table.0].value;
                    let mut gt = Mat::zeros(t.rows, t.cols);
                    for (r, &k) in idx.iter().enumerate() {
                        for (d, &s) in gt.row_mut(k).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Sum(a) => {
                    let x = &nodes[a.0].value;
                    accumulate(&mut grads, *a, Mat::new(x.rows, x.cols, vec![g.data[0]; x.data.len()]));
                }
                Op::SumCols(a) => {
                    let x = &nodes[a.0].value;
                    let mut ga = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        ga.row_mut(r).iter_mut().for_each(|v| *v = g.data[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowLinear(input, jac) => {
                    let c_in = nodes[input.0].value.cols;
                    let c_out = g.cols;
                    let mut gi = Mat::zeros(g.rows, c_in);
                    for r in 0..g.rows {
                        let j = &jac[r * c_out * c_in..(r + 1) * c_out * c_in];
                        for p in 0..c_out {
                            let gp = g.data[r * c_out + p];
                            for q in 0..c_in {
                                gi.data[r * c_in + q] += gp * j[p * c_in + q];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
            }
        }
        // Only leaves keep their gradients; intermediates were consumed above.
        Ok(Gradients { grads })
    }
}
