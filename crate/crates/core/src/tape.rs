//! Reverse-mode automatic differentiation over whole tensors.
//!
//! Operations are appended to a [`Tape`] as they are evaluated; each result
//! is a [`Var`] handle into the tape. [`Tape::backward`] consumes the tape and
//! replays the records in strict reverse order, summing adjoints into the
//! operands of every record.

use crate::error::{dim_err, IleError, Result};
use crate::linalg::{self, RidgeSolution};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    Sqrt(Var),
    Ln(Var),
    Recip(Var),
    Sum(Var),
    Pick(Var, usize),
    SelectCols(Var, Vec<usize>),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    JnfRightMul { m: Var, alpha: Var, beta: Var },
    RidgeSolve { m: Var, rhs: Var, sol: Box<RidgeSolution> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of traced operations. Confined to one thread of execution.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of its shape if the loss does not depend on it.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Tape indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Param, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Broadcasts a bias row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(row))?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c).checked("scale")?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, c), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c).checked("add_scalar")?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::AddScalar(a), rg))
    }

    fn unary(&mut self, a: Var, name: &str, f: fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).map(f).checked(name)?;
        let rg = self.rg(a);
        Ok(self.push(out, op, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", f64::abs, Op::Abs(a))
    }

    /// `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sqrt", f64::sqrt, Op::Sqrt(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "ln", f64::ln, Op::Ln(a))
    }

    /// Elementwise `1/x`.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "recip", f64::recip, Op::Recip(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum()).checked("sum")?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sum(a), rg))
    }

    /// Scalar view of the flat element `i`.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.value(a);
        if i >= t.numel() {
            return Err(dim_err("pick", format!("index {i} of {}", t.numel())));
        }
        let out = Tensor::scalar(t.data()[i]);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pick(a, i), rg))
    }

    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(a).select_cols(idx)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SelectCols(a, idx.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_cols(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `m · A` for the block-diagonal real-JNF `A` built from column
    /// vectors `alpha` and `beta`.
    pub fn jnf_right_mul(&mut self, m: Var, alpha: Var, beta: Var) -> Result<Var> {
        let out = linalg::jnf_right_mul(
            self.value(m),
            self.value(alpha).data(),
            self.value(beta).data(),
        )?;
        let rg = self.rg(m) || self.rg(alpha) || self.rg(beta);
        Ok(self.push(out, Op::JnfRightMul { m, alpha, beta }, rg))
    }

    /// Differentiable ridge solve `(MᵀM + λI)⁻¹ Mᵀ rhs`.
    pub fn ridge_solve(&mut self, m: Var, rhs: Var, lambda: f64) -> Result<Var> {
        let sol = linalg::ridge_factored(self.value(m), self.value(rhs), lambda)?;
        let out = sol.x.clone();
        let rg = self.rg(m) || self.rg(rhs);
        Ok(self.push(
            out,
            Op::RidgeSolve {
                m,
                rhs,
                sol: Box::new(sol),
            },
            rg,
        ))
    }

    /// Exact reverse-mode gradients of the scalar `loss` with respect to
    /// every recorded value. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(IleError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::from_parts(lt.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            let node = &self.nodes[i];
            if node.requires_grad {
                g.ensure_finite("backward")?;
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, contrib: Tensor| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            let slot = &mut grads[v.0];
            *slot = Some(match slot.take() {
                Some(prev) => prev.add(&contrib)?,
                None => contrib,
            });
            Ok(())
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(val(*b))?)?;
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t_matmul(g)?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(val(*b))?)?;
                acc(*b, g.mul(val(*a))?)?;
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone())?;
                let cols = g.cols();
                let mut r = vec![0.0; cols];
                for chunk in g.data().chunks(cols) {
                    for (s, &x) in r.iter_mut().zip(chunk) {
                        *s += x;
                    }
                }
                acc(*row, Tensor::from_parts(val(*row).shape().to_vec(), r))?;
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c))?,
            Op::AddScalar(a) => acc(*a, g.clone())?,
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, g.mul(&y.map(|t| 1.0 - t * t))?)?;
            }
            Op::Exp(a) => acc(*a, g.mul(&node.value)?)?,
            Op::Abs(a) => {
                let sign = val(*a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc(*a, g.mul(&sign)?)?;
            }
            Op::Relu(a) => {
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                acc(*a, g.mul(&mask)?)?;
            }
            Op::Sqrt(a) => {
                let d = node.value.map(|y| 0.5 / y);
                acc(*a, g.mul(&d)?.checked("sqrt backward")?)?;
            }
            Op::Ln(a) => {
                let d = val(*a).map(f64::recip);
                acc(*a, g.mul(&d)?.checked("ln backward")?)?;
            }
            Op::Recip(a) => {
                let d = node.value.map(|y| -y * y);
                acc(*a, g.mul(&d)?.checked("recip backward")?)?;
            }
            Op::Sum(a) => {
                let s = g.item();
                let shape = val(*a).shape().to_vec();
                let numel = val(*a).numel();
                acc(*a, Tensor::from_parts(shape, vec![s; numel]))?;
            }
            Op::Pick(a, i) => {
                let mut z = Tensor::zeros(val(*a).shape());
                z.data_mut()[*i] = g.item();
                acc(*a, z)?;
            }
            Op::SelectCols(a, idx) => {
                let src = val(*a);
                let (rows, n) = (src.rows(), src.cols());
                let k = idx.len();
                let mut out = vec![0.0; rows * n];
                for r in 0..rows {
                    for (j, &c) in idx.iter().enumerate() {
                        out[r * n + c] += g.data()[r * k + j];
                    }
                }
                acc(*a, Tensor::from_parts(vec![rows, n], out))?;
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let left: Vec<usize> = (0..ca).collect();
                let right: Vec<usize> = (ca..g.cols()).collect();
                acc(*a, g.select_cols(&left)?)?;
                acc(*b, g.select_cols(&right)?)?;
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    acc(p, Tensor::from_parts(vec![rows, cols], slice))?;
                    offset += rows;
                }
            }
            Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape())?)?,
            Op::JnfRightMul { m, alpha, beta } => {
                let mv = val(*m);
                let al = val(*alpha).data();
                let be = val(*beta).data();
                let n = mv.cols();
                let blocks = al.len();
                let mut m_bar = vec![0.0; mv.numel()];
                let mut a_bar = vec![0.0; blocks];
                let mut b_bar = vec![0.0; blocks];
                for (r, (grow, mrow)) in g.data().chunks(n).zip(mv.data().chunks(n)).enumerate() {
                    for k in 0..blocks {
                        let (g0, g1) = (grow[2 * k], grow[2 * k + 1]);
                        let (u, v) = (mrow[2 * k], mrow[2 * k + 1]);
                        m_bar[r * n + 2 * k] = al[k] * g0 + be[k] * g1;
                        m_bar[r * n + 2 * k + 1] = -be[k] * g0 + al[k] * g1;
                        a_bar[k] += g0 * u + g1 * v;
                        b_bar[k] += g1 * u - g0 * v;
                    }
                }
                acc(*m, Tensor::from_parts(mv.shape().to_vec(), m_bar))?;
                acc(*alpha, Tensor::from_parts(val(*alpha).shape().to_vec(), a_bar))?;
                acc(*beta, Tensor::from_parts(val(*beta).shape().to_vec(), b_bar))?;
            }
            Op::RidgeSolve { m, rhs, sol } => {
                let (m_bar, rhs_bar) = linalg::ridge_adjoint(val(*m), val(*rhs), sol, g)?;
                acc(*m, m_bar)?;
                acc(*rhs, rhs_bar)?;
            }
        }
        Ok(())
    }
}
