//! Regularized least squares through the normal equations.

use crate::error::{dim_err, IleError, Result};
use crate::tensor::Tensor;

/// Relative pivot threshold below which an unregularized Gram matrix is
/// treated as rank deficient.
const SINGULAR_RTOL: f64 = 1e-13;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `g`. With `strict` set, pivots that are tiny relative to the
    /// largest diagonal entry are reported as singular, not just
    /// non-positive ones.
    pub fn factor(g: &Tensor, strict: bool) -> Result<Self> {
        let n = g.rows();
        if g.shape() != [n, n] {
            return Err(dim_err("cholesky", format!("{:?} is not square", g.shape())));
        }
        let gd = g.data();
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(gd[i * n + i].abs()));
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = gd[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || (strict && d <= SINGULAR_RTOL * max_diag) {
                return Err(IleError::Singular(format!("cholesky pivot {j} = {d:e}")));
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = gd[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Cholesky { n, l })
    }

    /// Solves `G X = B` for every column of `b`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let n = self.n;
        if b.rows() != n {
            return Err(dim_err("cholesky_solve", format!("{} rows vs {n}", b.rows())));
        }
        let r = b.cols();
        let mut x = b.data().to_vec();
        let l = &self.l;
        for c in 0..r {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[i * r + c];
                for k in 0..i {
                    s -= l[i * n + k] * x[k * r + c];
                }
                x[i * r + c] = s / l[i * n + i];
            }
            // back: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[i * r + c];
                for k in i + 1..n {
                    s -= l[k * n + i] * x[k * r + c];
                }
                x[i * r + c] = s / l[i * n + i];
            }
        }
        Tensor::from_parts(vec![n, r], x).checked("cholesky_solve")
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.l[i * self.n + i].ln()).sum()
    }
}

/// `MᵀM + λI`, accumulated row by row.
pub fn regularized_gram(m: &Tensor, lambda: f64) -> Result<Tensor> {
    if m.shape().len() != 2 {
        return Err(dim_err("gram", format!("{:?}", m.shape())));
    }
    let q = m.cols();
    let mut g = vec![0.0; q * q];
    for r in 0..m.rows() {
        let row = m.row(r);
        for i in 0..q {
            let a = row[i];
            if a == 0.0 {
                continue;
            }
            for j in i..q {
                g[i * q + j] += a * row[j];
            }
        }
    }
    for i in 0..q {
        g[i * q + i] += lambda;
        for j in 0..i {
            g[i * q + j] = g[j * q + i];
        }
    }
    Tensor::from_parts(vec![q, q], g).checked("gram")
}

/// Factored ridge solution, kept so the adjoint can reuse the factor.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub x: Tensor,
    pub factor: Cholesky,
}

/// Minimizes `‖M x − rhs‖² + λ‖x‖²` via `(MᵀM + λI) x = Mᵀ rhs`.
pub fn ridge_solve(m: &Tensor, rhs: &Tensor, lambda: f64) -> Result<Tensor> {
    Ok(ridge_factored(m, rhs, lambda)?.x)
}

pub fn ridge_factored(m: &Tensor, rhs: &Tensor, lambda: f64) -> Result<RidgeSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(IleError::Config(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    if m.shape().len() != 2 || rhs.shape().len() != 2 || m.rows() == 0 {
        return Err(dim_err("ridge_solve", format!("{:?} / {:?}", m.shape(), rhs.shape())));
    }
    if m.rows() != rhs.rows() {
        return Err(dim_err(
            "ridge_solve",
            format!("{} equations vs {} right-hand rows", m.rows(), rhs.rows()),
        ));
    }
    m.ensure_finite("ridge_solve")?;
    rhs.ensure_finite("ridge_solve")?;
    let g = regularized_gram(m, lambda)?;
    let factor = Cholesky::factor(&g, lambda == 0.0)?;
    let x = factor.solve(&m.t_matmul(rhs)?)?;
    Ok(RidgeSolution { x, factor })
}

/// Reverse-mode adjoint of [`ridge_solve`]: given `x̄`, returns `(M̄, rhs̄)`.
///
/// With `W = G⁻¹ x̄`: `rhs̄ = M W` and `M̄ = rhs Wᵀ − M (X Wᵀ + W Xᵀ)`.
pub fn ridge_adjoint(
    m: &Tensor,
    rhs: &Tensor,
    sol: &RidgeSolution,
    x_bar: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let w = sol.factor.solve(x_bar)?;
    let rhs_bar = m.matmul(&w)?;
    let sym = w.matmul_t(&sol.x)?.add(&sol.x.matmul_t(&w)?)?;
    let m_bar = rhs.matmul_t(&w)?.sub(&m.matmul(&sym)?)?;
    Ok((m_bar, rhs_bar))
}

/// Right-multiplies `m` (rows × n) by the block-diagonal real Jordan matrix
/// with 2×2 blocks `[[α_k, β_k], [−β_k, α_k]]`.
pub fn jnf_right_mul(m: &Tensor, alpha: &[f64], beta: &[f64]) -> Result<Tensor> {
    let n = m.cols();
    if m.shape().len() != 2 || alpha.len() != beta.len() || n != 2 * alpha.len() {
        return Err(dim_err(
            "jnf_right_mul",
            format!("{:?} against {} blocks", m.shape(), alpha.len()),
        ));
    }
    let mut out = m.data().to_vec();
    for row in out.chunks_mut(n) {
        for (k, (&a, &b)) in alpha.iter().zip(beta).enumerate() {
            let (u, v) = (row[2 * k], row[2 * k + 1]);
            row[2 * k] = a * u - b * v;
            row[2 * k + 1] = b * u + a * v;
        }
    }
    Tensor::from_parts(vec![m.rows(), n], out).checked("jnf_right_mul")
}
