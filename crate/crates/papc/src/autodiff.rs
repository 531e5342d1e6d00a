//! Tape-based reverse-mode automatic differentiation over dense 2-D
//! `f64` arrays.
//!
//! A [`Tape`] owns a flat list of nodes; creation order is the
//! topological order, and [`Tape::backward`] walks it once in reverse,
//! accumulating `∂loss/∂node` additively. Vectors are represented as
//! `1 × F` (or `F × 1`) matrices; the only implicit broadcast is a row
//! vector over the rows of a matrix ([`Tape::add_row`] / [`Tape::mul_row`]).
//! Everything else is explicit.
//!
//! Shape violations are programming errors and panic immediately, naming
//! the primitive and both shapes.

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ScalarMul(Var, f64),
    ScalarAdd(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Neg(Var),
    Square(Var),
    SoftmaxRows(Var),
    /// Global-statistics normalization; `std` is cached at forward time.
    NormGlobal { x: Var, std: f64 },
    MulRow { x: Var, row: Var },
    AddRow { x: Var, row: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    Reshape(Var),
    /// Row-wise clamp-and-scale onto the feasible set; backward is the
    /// identity (straight-through).
    ProjectRowsST(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

enum GemmSide {
    GradLhs,
    GradRhs,
}

/// Recording tape. Single-writer; independent tapes may run concurrently.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Sum with Kahan compensation; keeps global reductions insensitive to
/// element order at the 1e-15 level.
fn kahan_sum(iter: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in iter {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes; the tape can be rebuilt from scratch.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        assert!(
            !self.backward_done,
            "tape is stale after backward; call zero_grads or clear before extending"
        );
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a trainable leaf.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a constant (no gradient is accumulated into it).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated in `v` by the last backward pass. Only leaf
    /// accumulators survive the pass; interior ones are released as soon
    /// as they have been distributed.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn dim(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    // ---- primitives ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        assert_eq!(da, db, "add: shape mismatch {da:?} vs {db:?}");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        assert_eq!(da, db, "sub: shape mismatch {da:?} vs {db:?}");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        assert_eq!(da, db, "hadamard: shape mismatch {da:?} vs {db:?}");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Hadamard(a, b), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dim(a), self.dim(b));
        assert_eq!(da.1, db.0, "matmul: inner dims differ, {da:?} x {db:?}");
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        let rg = self.requires(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        let rg = self.requires(a);
        self.push(value, Op::ScalarMul(a, c), rg)
    }

    pub fn scalar_add(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        let rg = self.requires(a);
        self.push(value, Op::ScalarAdd(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.exp());
        let rg = self.requires(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.ln());
        let rg = self.requires(a);
        self.push(value, Op::Ln(a), rg)
    }

    /// ReLU; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|&x| if x > 0.0 { x } else { 0.0 });
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| -x);
        let rg = self.requires(a);
        self.push(value, Op::Neg(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * x);
        let rg = self.requires(a);
        self.push(value, Op::Square(a), rg)
    }

    /// Row-wise softmax with per-row max shift.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Normalizes by mean and population std computed over all elements:
    /// `(x - mean) / sqrt(var + eps)`.
    pub fn norm_global(&mut self, a: Var, eps: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let n = x.len() as f64;
        assert!(x.len() >= 2, "norm_global: need at least 2 elements, got {:?}", x.dim());
        let mean = kahan_sum(x.iter().cloned()) / n;
        let var = kahan_sum(x.iter().map(|&v| (v - mean) * (v - mean))) / n;
        let std = (var + eps).sqrt();
        let value = x.map(|&v| (v - mean) / std);
        let rg = self.requires(a);
        self.push(value, Op::NormGlobal { x: a, std }, rg)
    }

    /// Broadcast-multiplies each row of `x` (K × F) by `row` (1 × F).
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (dx, dr) = (self.dim(x), self.dim(row));
        assert!(dr.0 == 1 && dr.1 == dx.1, "mul_row: shape mismatch {dx:?} vs row {dr:?}");
        let value = &self.nodes[x.0].value * &self.nodes[row.0].value.row(0);
        let rg = self.requires(x) || self.requires(row);
        self.push(value, Op::MulRow { x, row }, rg)
    }

    /// Broadcast-adds `row` (1 × F) to each row of `x` (K × F).
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (dx, dr) = (self.dim(x), self.dim(row));
        assert!(dr.0 == 1 && dr.1 == dx.1, "add_row: shape mismatch {dx:?} vs row {dr:?}");
        let value = &self.nodes[x.0].value + &self.nodes[row.0].value.row(0);
        let rg = self.requires(x) || self.requires(row);
        self.push(value, Op::AddRow { x, row }, rg)
    }

    /// Column slice `x[:, start..start+len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let dx = self.dim(x);
        assert!(
            start + len <= dx.1,
            "slice_cols: range {start}..{} out of bounds for {dx:?}",
            start + len
        );
        let value = self.nodes[x.0].value.slice(ndarray::s![.., start..start + len]).to_owned();
        let rg = self.requires(x);
        self.push(value, Op::SliceCols { x, start }, rg)
    }

    /// Concatenates along the feature (column) dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let rows = self.dim(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let d = self.dim(p);
            assert_eq!(d.0, rows, "concat_cols: row mismatch {:?} vs {:?}", (rows, 0), d);
            cols += d.1;
        }
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let d = self.dim(p);
            value
                .slice_mut(ndarray::s![.., at..at + d.1])
                .assign(&self.nodes[p.0].value);
            at += d.1;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Sum of all elements, as a 1 × 1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let rg = self.requires(a);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let dx = self.dim(a);
        assert_eq!(
            dx.0 * dx.1,
            rows * cols,
            "reshape: cannot reshape {dx:?} into ({rows}, {cols})"
        );
        let value = self.nodes[a.0]
            .value
            .to_shape((rows, cols))
            .expect("reshape: layout")
            .to_owned();
        let rg = self.requires(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Per-row clamp to the nonnegative orthant and scale onto the L2
    /// ball of radius `radius`; gradients pass through unchanged.
    pub fn project_rows_st(&mut self, a: Var, radius: f64) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        for mut row in value.rows_mut() {
            let mut norm_sq = 0.0;
            for v in row.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
                norm_sq += *v * *v;
            }
            if norm_sq > radius * radius {
                let scale = radius / norm_sq.sqrt();
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
        }
        let rg = self.requires(a);
        self.push(value, Op::ProjectRowsST(a), rg)
    }

    // ---- backward --------------------------------------------------------

    fn accumulate(&mut self, v: Var, contribution: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => *g += &contribution,
            slot => *slot = Some(contribution),
        }
    }

    /// Accumulates a matmul-backward product straight into the target's
    /// gradient buffer: `grad_A += g·Bᵀ` or `grad_B += Aᵀ·g`.
    fn gemm_into(&mut self, target: Var, g: &Array2<f64>, other: Var, side: GemmSide) {
        let mut acc = self.nodes[target.0]
            .grad
            .take()
            .unwrap_or_else(|| Array2::zeros(self.nodes[target.0].value.dim()));
        let other_val = &self.nodes[other.0].value;
        match side {
            GemmSide::GradLhs => {
                ndarray::linalg::general_mat_mul(1.0, g, &other_val.t(), 1.0, &mut acc)
            }
            GemmSide::GradRhs => {
                ndarray::linalg::general_mat_mul(1.0, &other_val.t(), g, 1.0, &mut acc)
            }
        }
        self.nodes[target.0].grad = Some(acc);
    }

    /// Resets all gradient accumulators so another backward pass can run.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse pass from a scalar (1 × 1) loss node. Every trainable leaf
    /// reachable from `loss` ends up holding `∂loss/∂leaf`. Running
    /// backward twice without [`Tape::zero_grads`] in between panics.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            !self.backward_done,
            "backward on a stale tape; call zero_grads before running backward again"
        );
        assert_eq!(
            self.dim(loss),
            (1, 1),
            "backward: loss must be scalar (1 x 1), got {:?}",
            self.dim(loss)
        );
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return;
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Take the accumulator while distributing to parents; leaf
            // gradients are kept, interior ones are released once spent.
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.requires(a) {
                        self.accumulate(a, g.clone());
                    }
                    self.accumulate(b, g);
                }
                Op::Sub(a, b) => {
                    if self.requires(a) {
                        self.accumulate(a, g.clone());
                    }
                    self.accumulate(b, -g);
                }
                Op::Hadamard(a, b) => {
                    if self.requires(a) {
                        let ga = &g * &self.nodes[b.0].value;
                        self.accumulate(a, ga);
                    }
                    if self.requires(b) {
                        let gb = &g * &self.nodes[a.0].value;
                        self.accumulate(b, gb);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        self.gemm_into(a, &g, b, GemmSide::GradLhs);
                    }
                    if self.requires(b) {
                        self.gemm_into(b, &g, a, GemmSide::GradRhs);
                    }
                }
                Op::Transpose(a) => {
                    self.accumulate(a, g.t().to_owned());
                }
                Op::ScalarMul(a, c) => {
                    self.accumulate(a, &g * c);
                }
                Op::ScalarAdd(a) => {
                    self.accumulate(a, g);
                }
                Op::Exp(a) => {
                    let contribution = &g * &self.nodes[i].value;
                    self.accumulate(a, contribution);
                }
                Op::Ln(a) => {
                    let contribution = &g / &self.nodes[a.0].value;
                    self.accumulate(a, contribution);
                }
                Op::Relu(a) => {
                    let mut dx = g.clone();
                    ndarray::Zip::from(&mut dx)
                        .and(&self.nodes[a.0].value)
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0;
                            }
                        });
                    self.accumulate(a, dx);
                }
                Op::Neg(a) => {
                    self.accumulate(a, -g);
                }
                Op::Square(a) => {
                    let contribution = 2.0 * &g * &self.nodes[a.0].value;
                    self.accumulate(a, contribution);
                }
                Op::SoftmaxRows(a) => {
                    // Per row: dx = y ⊙ (g - <g, y>)
                    let y = &self.nodes[i].value;
                    let mut dx = Array2::zeros(y.dim());
                    for (r, (y_row, g_row)) in
                        y.rows().into_iter().zip(g.rows()).enumerate()
                    {
                        let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(a, b)| a * b).sum();
                        for (c, (&yv, &gv)) in y_row.iter().zip(g_row.iter()).enumerate() {
                            dx[[r, c]] = yv * (gv - dot);
                        }
                    }
                    self.accumulate(a, dx);
                }
                Op::NormGlobal { x, std } => {
                    // dx = (g - mean(g) - y*mean(g ⊙ y)) / std
                    let y = &self.nodes[i].value;
                    let n = y.len() as f64;
                    let g_mean = g.sum() / n;
                    let gy_mean = (&g * y).sum() / n;
                    let dx = y.map(|&yv| -yv * gy_mean) + &g - g_mean;
                    self.accumulate(x, dx / std);
                }
                Op::MulRow { x, row } => {
                    let gx = &g * &self.nodes[row.0].value.row(0);
                    let grow = (&g * &self.nodes[x.0].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    self.accumulate(x, gx);
                    self.accumulate(row, grow);
                }
                Op::AddRow { x, row } => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(x, g);
                    self.accumulate(row, grow);
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Array2::zeros(self.nodes[x.0].value.dim());
                    dx.slice_mut(ndarray::s![.., start..start + g.ncols()]).assign(&g);
                    self.accumulate(x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        at += w;
                        self.accumulate(p, gp);
                    }
                }
                Op::SumAll(a) => {
                    let dx = Array2::from_elem(self.nodes[a.0].value.dim(), g[[0, 0]]);
                    self.accumulate(a, dx);
                }
                Op::Reshape(a) => {
                    let dim = self.nodes[a.0].value.dim();
                    let dx = g.to_shape(dim).expect("reshape backward: layout").to_owned();
                    self.accumulate(a, dx);
                }
                Op::ProjectRowsST(a) => {
                    self.accumulate(a, g);
                }
            }
        }
    }
}
