//! Dense row-major `f64` tensors.
//!
//! Everything the model touches is either a scalar (`shape == []`) or a
//! matrix (`shape == [rows, cols]`); column vectors are `[n, 1]`. The pure
//! operations here are what the tape records and replays.

use std::fmt;

use crate::error::{dim_err, IleError, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(IleError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Column vector `[n, 1]`.
    pub fn column(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n, 1], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(IleError::Shape("ragged rows".into()));
        }
        Tensor::matrix(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn ensure_finite(&self, ctx: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(IleError::Numeric(ctx.to_string()))
        }
    }

    pub(crate) fn checked(self, ctx: &str) -> Result<Self> {
        self.ensure_finite(ctx)?;
        Ok(self)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(dim_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(dim_err(op, format!("expected a matrix, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_parts(vec![m, n], out).checked("matmul")
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.require_matrix("t_matmul")?;
        let (k2, n) = other.require_matrix("t_matmul")?;
        if k != k2 {
            return Err(dim_err("t_matmul", format!("({k}x{m})ᵀ · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &other.data[p * n..(p + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::from_parts(vec![m, n], out).checked("t_matmul")
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul_t")?;
        let (n, k2) = other.require_matrix("matmul_t")?;
        if k != k2 {
            return Err(dim_err("matmul_t", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Tensor::from_parts(vec![m, n], out).checked("matmul_t")
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(dim_err(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_parts(self.shape.clone(), data).checked(op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// Adds a `[1, n]` (or `[n]`) row to every row of an `[m, n]` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = self.require_matrix("add_row")?;
        if row.numel() != n {
            return Err(dim_err("add_row", format!("{m}x{n} + row of {}", row.numel())));
        }
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Tensor::from_parts(vec![m, n], out).checked("add_row")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// Sum of all entries in a fixed left-to-right order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Gathers columns: `out[:, j] = self[:, idx[j]]`.
    pub fn select_cols(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = self.require_matrix("select_cols")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(dim_err("select_cols", format!("column {bad} of {n}")));
        }
        let k = idx.len();
        let mut out = Vec::with_capacity(m * k);
        for r in 0..m {
            let row = &self.data[r * n..(r + 1) * n];
            out.extend(idx.iter().map(|&i| row[i]));
        }
        Ok(Tensor::from_parts(vec![m, k], out))
    }

    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        let (m, a) = self.require_matrix("concat_cols")?;
        let (m2, b) = other.require_matrix("concat_cols")?;
        if m != m2 {
            return Err(dim_err("concat_cols", format!("{m} rows vs {m2} rows")));
        }
        let mut out = Vec::with_capacity(m * (a + b));
        for r in 0..m {
            out.extend_from_slice(&self.data[r * a..(r + 1) * a]);
            out.extend_from_slice(&other.data[r * b..(r + 1) * b]);
        }
        Ok(Tensor::from_parts(vec![m, a + b], out))
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat_rows", "no blocks"))?;
        let (_, n) = first.require_matrix("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (m, c) = p.require_matrix("concat_rows")?;
            if c != n {
                return Err(dim_err("concat_rows", format!("{c} cols vs {n} cols")));
            }
            rows += m;
            out.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![rows, n], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_rotation() {
        let x = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&x).unwrap(), x);
        let rot = Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let e1 = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(rot.matmul(&e1).unwrap().data(), &[0.0, -1.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - s).abs() < 1e-12);
            }
        }
        let at = a.transpose().unwrap();
        assert!(at.t_matmul(&b).unwrap().max_abs_diff(&c) < 1e-14);
        assert!(a.t_matmul(&b).is_err());
        assert!(a.t_matmul(&a).unwrap().max_abs_diff(&at.matmul(&a).unwrap()) < 1e-14);
        assert!(a.matmul_t(&a).unwrap().max_abs_diff(&a.matmul(&at).unwrap()) < 1e-14);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&a), Err(IleError::Dimension { .. })));
    }

    #[test]
    fn rejects_non_finite_and_bad_shape() {
        assert!(matches!(Tensor::new(vec![2], vec![1.0, f64::NAN]), Err(IleError::Numeric(_))));
        assert!(matches!(Tensor::new(vec![2, 2], vec![1.0]), Err(IleError::Shape(_))));
        assert_eq!(Tensor::new(vec![], vec![2.0]).unwrap().item(), 2.0);
    }

    #[test]
    fn gather_and_concat() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let g = a.select_cols(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[3.0, 1.0, 6.0, 4.0]);
        let c = g.concat_cols(&a.select_cols(&[1]).unwrap()).unwrap();
        assert_eq!(c.data(), &[3.0, 1.0, 2.0, 6.0, 4.0, 5.0]);
        let v = Tensor::concat_rows(&[&a, &a]).unwrap();
        assert_eq!(v.shape(), &[4, 3]);
    }
}
