//! Tape-based reverse-mode automatic differentiation over `ndarray` matrices.
//!
//! Every tensor is a dense `Array2<f64>`; scalars are 1x1 matrices, vectors are
//! n x 1 or 1 x n. A [`Tape`] records one forward computation as a flat list of
//! nodes, and [`Tape::backward`] walks that list in reverse to accumulate
//! gradients for every node that can influence the root.
//!
//! The op set is deliberately small: matrix products, broadcast arithmetic,
//! a few pointwise nonlinearities, row/column reductions, slicing and
//! concatenation, and multiplication by a constant sparse matrix. Anything
//! else (layer norm, attention, losses) is composed from these.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var {
    idx: usize,
}

/// Constant sparse matrix in CSR form, used for graph propagation operators.
#[derive(Clone, Debug)]
pub struct SparseMat {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMat {
    /// Builds a CSR matrix from (row, col, value) triplets. Duplicate
    /// coordinates are summed; entries are sorted so construction is
    /// deterministic regardless of triplet order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(merged.len());
        let mut vals = Vec::with_capacity(merged.len());
        for (r, c, v) in merged {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMat {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Dense product `self * x`.
    pub fn mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.ncols, x.nrows(), "sparse matmul shape mismatch");
        let d = x.ncols();
        let mut out = Array2::zeros((self.nrows, d));
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.vals[k];
                for j in 0..d {
                    out[[r, j]] += v * x[[c, j]];
                }
            }
        }
        out
    }

    /// Dense product `self^T * x`.
    pub fn tr_mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.nrows, x.nrows(), "sparse transpose matmul shape mismatch");
        let d = x.ncols();
        let mut out = Array2::zeros((self.ncols, d));
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.vals[k];
                for j in 0..d {
                    out[[c, j]] += v * x[[r, j]];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[[r, self.col_idx[k]]] += self.vals[k];
            }
        }
        out
    }
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddConst(Var),
    MulConst(Var, Array2<f64>),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    PowConst(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    RowMean(Var),
    ColSum(Var),
    ColMean(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    SparseMatmul(Rc<SparseMat>, Var),
    Reshape(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a single forward computation; dropped after use.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value entered the tape"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            idx: nodes.len() - 1,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.idx].needs_grad
    }

    /// Differentiable leaf (a parameter or another quantity whose gradient is
    /// wanted).
    pub fn var(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf; backward never propagates into it.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.idx].value.clone()
    }

    /// Reads a node's value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.idx].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        nodes[v.idx].value.dim()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.idx].value, &nodes[b.idx].value);
            assert_eq!(av.ncols(), bv.nrows(), "matmul shape mismatch");
            av.dot(bv)
        };
        self.push(value, Op::Matmul(a, b), self.needs(a) || self.needs(b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.idx].value, &nodes[b.idx].value);
            assert_eq!(av.dim(), bv.dim(), "add shape mismatch");
            av + bv
        };
        self.push(value, Op::Add(a, b), self.needs(a) || self.needs(b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.idx].value, &nodes[b.idx].value);
            assert_eq!(av.dim(), bv.dim(), "mul shape mismatch");
            av * bv
        };
        self.push(value, Op::Mul(a, b), self.needs(a) || self.needs(b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.idx].value * c
        };
        self.push(value, Op::Scale(a, c), self.needs(a))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            &nodes[a.idx].value + c
        };
        self.push(value, Op::AddScalar(a), self.needs(a))
    }

    /// Adds a constant matrix; gradient passes through unchanged. This is the
    /// straight-through building block: `add_const(soft, hard - soft_value)`
    /// evaluates to `hard` but differentiates like `soft`.
    pub fn add_const(&self, a: Var, c: &Array2<f64>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            assert_eq!(av.dim(), c.dim(), "add_const shape mismatch");
            av + c
        };
        self.push(value, Op::AddConst(a), self.needs(a))
    }

    /// Elementwise product with a constant matrix (masking, fixed weights).
    pub fn mul_const(&self, a: Var, c: &Array2<f64>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            assert_eq!(av.dim(), c.dim(), "mul_const shape mismatch");
            av * c
        };
        self.push(value, Op::MulConst(a, c.clone()), self.needs(a))
    }

    /// `x + r` with `r` a 1 x d row broadcast over all rows of `x`.
    pub fn add_row(&self, x: Var, r: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, rv) = (&nodes[x.idx].value, &nodes[r.idx].value);
            assert_eq!(rv.nrows(), 1, "row operand must be 1 x d");
            assert_eq!(xv.ncols(), rv.ncols(), "add_row width mismatch");
            xv + &rv.row(0)
        };
        self.push(value, Op::AddRow(x, r), self.needs(x) || self.needs(r))
    }

    pub fn mul_row(&self, x: Var, r: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, rv) = (&nodes[x.idx].value, &nodes[r.idx].value);
            assert_eq!(rv.nrows(), 1, "row operand must be 1 x d");
            assert_eq!(xv.ncols(), rv.ncols(), "mul_row width mismatch");
            xv * &rv.row(0)
        };
        self.push(value, Op::MulRow(x, r), self.needs(x) || self.needs(r))
    }

    /// `x + c` with `c` an n x 1 column broadcast over all columns of `x`.
    pub fn add_col(&self, x: Var, c: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, cv) = (&nodes[x.idx].value, &nodes[c.idx].value);
            assert_eq!(cv.ncols(), 1, "col operand must be n x 1");
            assert_eq!(xv.nrows(), cv.nrows(), "add_col height mismatch");
            let mut out = xv.clone();
            for (mut row, &b) in out.rows_mut().into_iter().zip(cv.column(0).iter()) {
                row += b;
            }
            out
        };
        self.push(value, Op::AddCol(x, c), self.needs(x) || self.needs(c))
    }

    pub fn mul_col(&self, x: Var, c: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (xv, cv) = (&nodes[x.idx].value, &nodes[c.idx].value);
            assert_eq!(cv.ncols(), 1, "col operand must be n x 1");
            assert_eq!(xv.nrows(), cv.nrows(), "mul_col height mismatch");
            let mut out = xv.clone();
            for (mut row, &b) in out.rows_mut().into_iter().zip(cv.column(0).iter()) {
                row *= b;
            }
            out
        };
        self.push(value, Op::MulCol(x, c), self.needs(x) || self.needs(c))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.mapv(|x| x.max(0.0))
        };
        self.push(value, Op::Relu(a), self.needs(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.mapv(|x| 1.0 / (1.0 + (-x).exp()))
        };
        self.push(value, Op::Sigmoid(a), self.needs(a))
    }

    /// Elementwise `x^p`. The caller must keep inputs in the domain where the
    /// derivative is finite (positive inputs for fractional or negative `p`).
    pub fn pow_const(&self, a: Var, p: f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.mapv(|x| x.powf(p))
        };
        self.push(value, Op::PowConst(a, p), self.needs(a))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            softmax_rows_dense(&nodes[a.idx].value)
        };
        self.push(value, Op::SoftmaxRows(a), self.needs(a))
    }

    pub fn log_softmax_rows(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let mut out = av.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_z = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
                row -= log_z;
            }
            out
        };
        self.push(value, Op::LogSoftmaxRows(a), self.needs(a))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            Array2::from_elem((1, 1), nodes[a.idx].value.sum())
        };
        self.push(value, Op::SumAll(a), self.needs(a))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            Array2::from_elem((1, 1), av.sum() / (av.len() as f64))
        };
        self.push(value, Op::MeanAll(a), self.needs(a))
    }

    /// Sums each row: (n, d) -> (n, 1).
    pub fn row_sum(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let mut out = Array2::zeros((av.nrows(), 1));
            for (i, row) in av.rows().into_iter().enumerate() {
                out[[i, 0]] = row.sum();
            }
            out
        };
        self.push(value, Op::RowSum(a), self.needs(a))
    }

    pub fn row_mean(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let d = av.ncols() as f64;
            let mut out = Array2::zeros((av.nrows(), 1));
            for (i, row) in av.rows().into_iter().enumerate() {
                out[[i, 0]] = row.sum() / d;
            }
            out
        };
        self.push(value, Op::RowMean(a), self.needs(a))
    }

    /// Sums each column: (n, d) -> (1, d).
    pub fn col_sum(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let mut out = Array2::zeros((1, av.ncols()));
            for row in av.rows() {
                for (j, &x) in row.iter().enumerate() {
                    out[[0, j]] += x;
                }
            }
            out
        };
        self.push(value, Op::ColSum(a), self.needs(a))
    }

    pub fn col_mean(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let n = av.nrows() as f64;
            let mut out = Array2::zeros((1, av.ncols()));
            for row in av.rows() {
                for (j, &x) in row.iter().enumerate() {
                    out[[0, j]] += x / n;
                }
            }
            out
        };
        self.push(value, Op::ColMean(a), self.needs(a))
    }

    /// Vertical stack. Zero-row members are allowed and contribute nothing.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.idx].value.view()).collect();
            concatenate(Axis(0), &views).expect("concat_rows width mismatch")
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Horizontal stack.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.idx].value.view()).collect();
            concatenate(Axis(1), &views).expect("concat_cols height mismatch")
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Rows `r0..r1` (half-open). An empty range yields a 0 x d matrix.
    pub fn slice_rows(&self, a: Var, r0: usize, r1: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            assert!(r0 <= r1 && r1 <= av.nrows(), "slice_rows out of bounds");
            av.slice(s![r0..r1, ..]).to_owned()
        };
        self.push(value, Op::SliceRows(a, r0), self.needs(a))
    }

    pub fn slice_cols(&self, a: Var, c0: usize, c1: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            assert!(c0 <= c1 && c1 <= av.ncols(), "slice_cols out of bounds");
            av.slice(s![.., c0..c1]).to_owned()
        };
        self.push(value, Op::SliceCols(a, c0), self.needs(a))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.t().to_owned()
        };
        self.push(value, Op::Transpose(a), self.needs(a))
    }

    /// Selects rows by index; duplicates are allowed (backward scatter-adds).
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            let mut out = Array2::zeros((idx.len(), av.ncols()));
            for (i, &r) in idx.iter().enumerate() {
                assert!(r < av.nrows(), "gather_rows index out of bounds");
                out.row_mut(i).assign(&av.row(r));
            }
            out
        };
        self.push(value, Op::GatherRows(a, idx.to_vec()), self.needs(a))
    }

    /// `S * x` with `S` a constant sparse matrix.
    pub fn sparse_matmul(&self, s: &Rc<SparseMat>, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            s.mul_dense(&nodes[x.idx].value)
        };
        self.push(value, Op::SparseMatmul(Rc::clone(s), x), self.needs(x))
    }

    /// Row-major reshape preserving element count.
    pub fn reshape(&self, a: Var, nrows: usize, ncols: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.idx].value;
            assert_eq!(av.len(), nrows * ncols, "reshape element count mismatch");
            Array2::from_shape_vec((nrows, ncols), av.iter().cloned().collect())
                .expect("reshape failed")
        };
        self.push(value, Op::Reshape(a), self.needs(a))
    }

    /// Reverse pass from `root` (must be 1 x 1). Returns gradients for every
    /// node marked as needing one; constants and their pure descendants are
    /// skipped.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.idx].value.dim(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[root.idx] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.idx).rev() {
            if !nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    if nodes[a.idx].needs_grad {
                        let gb = g.dot(&nodes[b.idx].value.t());
                        accumulate(&mut grads, *a, gb);
                    }
                    if nodes[b.idx].needs_grad {
                        let ga = nodes[a.idx].value.t().dot(&g);
                        accumulate(&mut grads, *b, ga);
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a.idx].needs_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if nodes[b.idx].needs_grad {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[a.idx].needs_grad {
                        accumulate(&mut grads, *a, &g * &nodes[b.idx].value);
                    }
                    if nodes[b.idx].needs_grad {
                        accumulate(&mut grads, *b, &g * &nodes[a.idx].value);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::AddScalar(a) | Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, &g * c),
                Op::AddRow(x, r) => {
                    if nodes[x.idx].needs_grad {
                        accumulate(&mut grads, *x, g.clone());
                    }
                    if nodes[r.idx].needs_grad {
                        accumulate(&mut grads, *r, col_sum_dense(&g));
                    }
                }
                Op::MulRow(x, r) => {
                    if nodes[x.idx].needs_grad {
                        accumulate(&mut grads, *x, &g * &nodes[r.idx].value.row(0));
                    }
                    if nodes[r.idx].needs_grad {
                        let gx = &g * &nodes[x.idx].value;
                        accumulate(&mut grads, *r, col_sum_dense(&gx));
                    }
                }
                Op::AddCol(x, c) => {
                    if nodes[x.idx].needs_grad {
                        accumulate(&mut grads, *x, g.clone());
                    }
                    if nodes[c.idx].needs_grad {
                        accumulate(&mut grads, *c, row_sum_dense(&g));
                    }
                }
                Op::MulCol(x, c) => {
                    if nodes[x.idx].needs_grad {
                        let mut gx = g.clone();
                        let cv = &nodes[c.idx].value;
                        for (mut row, &b) in gx.rows_mut().into_iter().zip(cv.column(0).iter()) {
                            row *= b;
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                    if nodes[c.idx].needs_grad {
                        let gx = &g * &nodes[x.idx].value;
                        accumulate(&mut grads, *c, row_sum_dense(&gx));
                    }
                }
                Op::Relu(a) => {
                    let mask = nodes[a.idx].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Sigmoid(a) => {
                    let fwd = &node.value;
                    let deriv = fwd * &fwd.mapv(|s| 1.0 - s);
                    accumulate(&mut grads, *a, &g * &deriv);
                }
                Op::PowConst(a, p) => {
                    let deriv = nodes[a.idx].value.mapv(|x| p * x.powf(p - 1.0));
                    accumulate(&mut grads, *a, &g * &deriv);
                }
                Op::SoftmaxRows(a) => {
                    let sm = &node.value;
                    let mut ga = Array2::zeros(g.dim());
                    for i in 0..g.nrows() {
                        let dot: f64 = g
                            .row(i)
                            .iter()
                            .zip(sm.row(i).iter())
                            .map(|(&gi, &si)| gi * si)
                            .sum();
                        for j in 0..g.ncols() {
                            ga[[i, j]] = sm[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let sm = node.value.mapv(f64::exp);
                    let mut ga = g.clone();
                    for i in 0..g.nrows() {
                        let gsum: f64 = g.row(i).sum();
                        for j in 0..g.ncols() {
                            ga[[i, j]] -= sm[[i, j]] * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    accumulate(&mut grads, *a, Array2::from_elem((n, d), g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let scale = g[[0, 0]] / ((n * d) as f64);
                    accumulate(&mut grads, *a, Array2::from_elem((n, d), scale));
                }
                Op::RowSum(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let mut ga = Array2::zeros((n, d));
                    for i in 0..n {
                        ga.row_mut(i).fill(g[[i, 0]]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowMean(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let mut ga = Array2::zeros((n, d));
                    for i in 0..n {
                        ga.row_mut(i).fill(g[[i, 0]] / d as f64);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ColSum(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let mut ga = Array2::zeros((n, d));
                    for i in 0..n {
                        for j in 0..d {
                            ga[[i, j]] = g[[0, j]];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ColMean(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let mut ga = Array2::zeros((n, d));
                    for i in 0..n {
                        for j in 0..d {
                            ga[[i, j]] = g[[0, j]] / n as f64;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = nodes[p.idx].value.nrows();
                        if nodes[p.idx].needs_grad && rows > 0 {
                            let gp = g.slice(s![offset..offset + rows, ..]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = nodes[p.idx].value.ncols();
                        if nodes[p.idx].needs_grad && cols > 0 {
                            let gp = g.slice(s![.., offset..offset + cols]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        offset += cols;
                    }
                }
                Op::SliceRows(a, r0) => {
                    let mut ga = Array2::zeros(nodes[a.idx].value.dim());
                    ga.slice_mut(s![*r0..*r0 + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, c0) => {
                    let mut ga = Array2::zeros(nodes[a.idx].value.dim());
                    ga.slice_mut(s![.., *c0..*c0 + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::GatherRows(a, idx_list) => {
                    let mut ga = Array2::zeros(nodes[a.idx].value.dim());
                    for (i, &r) in idx_list.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(i);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SparseMatmul(s, x) => {
                    accumulate(&mut grads, *x, s.tr_mul_dense(&g));
                }
                Op::Reshape(a) => {
                    let (n, d) = nodes[a.idx].value.dim();
                    let ga = Array2::from_shape_vec((n, d), g.iter().cloned().collect())
                        .expect("reshape grad failed");
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.idx] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn col_sum_dense(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((1, x.ncols()));
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            out[[0, j]] += v;
        }
    }
    out
}

fn row_sum_dense(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 1));
    for (i, row) in x.rows().into_iter().enumerate() {
        out[[i, 0]] = row.sum();
    }
    out
}

/// Numerically stable rowwise softmax on a plain matrix.
pub fn softmax_rows_dense(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row /= sum;
    }
    out
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if any path connected them.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.idx].as_ref()
    }

    /// Like [`Gradients::get`] but returns a zero matrix of the given shape
    /// when the node received no gradient.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        match self.grads[v.idx].as_ref() {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}
