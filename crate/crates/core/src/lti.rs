//! Stable linear time-invariant latent dynamics.
//!
//! `A` is kept in real Jordan form: 2×2 blocks `[[α, β], [−β, α]]`, each an
//! eigenvalue pair `α ± iβ`. The unconstrained parameters `(θ_α, θ_β)` are
//! mapped so every block has modulus at most one:
//!
//! ```text
//! α = max((1 − ε) − |θ_α|, 0)
//! β = max(1 − |θ_β|, 0) · √(1 − α²)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, IleError, Result};
use crate::linalg;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-14;

/// Unconstrained parameters of the state matrix, one `(θ_α, θ_β)` per block.
#[derive(Debug, Clone, PartialEq)]
pub struct JnfParams {
    pub theta_alpha: Tensor,
    pub theta_beta: Tensor,
    pub epsilon: f64,
}

/// Traced handles for one evaluation of the parameter map.
#[derive(Debug, Clone, Copy)]
pub struct JnfVars {
    pub theta_alpha: Var,
    pub theta_beta: Var,
    pub alpha: Var,
    pub beta: Var,
}

impl JnfParams {
    pub fn new(theta_alpha: Vec<f64>, theta_beta: Vec<f64>) -> Result<Self> {
        JnfParams::with_epsilon(theta_alpha, theta_beta, DEFAULT_EPSILON)
    }

    pub fn with_epsilon(theta_alpha: Vec<f64>, theta_beta: Vec<f64>, epsilon: f64) -> Result<Self> {
        if theta_alpha.len() != theta_beta.len() || theta_alpha.is_empty() {
            return Err(IleError::Config(format!(
                "need matching non-empty θ_α/θ_β, got {} and {}",
                theta_alpha.len(),
                theta_beta.len()
            )));
        }
        if !(epsilon > 0.0 && epsilon <= 1e-6) {
            return Err(IleError::Config(format!("epsilon must lie in (0, 1e-6], got {epsilon}")));
        }
        Ok(JnfParams {
            theta_alpha: Tensor::column(theta_alpha)?,
            theta_beta: Tensor::column(theta_beta)?,
            epsilon,
        })
    }

    /// Near-identity, slowly rotating start: `α ∈ [0.85, 1 − ε)` and `β`
    /// at most a tenth of its ceiling.
    pub fn init<R: Rng>(state_dim: usize, epsilon: f64, rng: &mut R) -> Result<Self> {
        if state_dim == 0 || !state_dim.is_multiple_of(2) {
            return Err(IleError::Config(format!("state dimension must be even and positive, got {state_dim}")));
        }
        let blocks = state_dim / 2;
        let ta = (0..blocks).map(|_| rng.random_range(0.0..0.15)).collect();
        let tb = (0..blocks).map(|_| rng.random_range(0.9..1.0)).collect();
        JnfParams::with_epsilon(ta, tb, epsilon)
    }

    /// Parameters realizing the given blocks. Needs `α ≤ 1 − ε` and
    /// `β ≤ √(1 − α²)`.
    pub fn from_blocks(blocks: &[(f64, f64)], epsilon: f64) -> Result<Self> {
        let mut ta = Vec::with_capacity(blocks.len());
        let mut tb = Vec::with_capacity(blocks.len());
        for &(a, b) in blocks {
            let ceiling = (1.0 - a * a).sqrt();
            if !(0.0..=1.0 - epsilon).contains(&a) || !(0.0..=ceiling).contains(&b) {
                return Err(IleError::Config(format!("block ({a}, {b}) is outside the stable region")));
            }
            ta.push((1.0 - epsilon) - a);
            tb.push(1.0 - b / ceiling);
        }
        JnfParams::with_epsilon(ta, tb, epsilon)
    }

    pub fn blocks(&self) -> usize {
        self.theta_alpha.numel()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.blocks()
    }

    /// Traces the parameter map; leaves are trainable when `trainable`.
    pub fn trace(&self, tape: &mut Tape, trainable: bool) -> Result<JnfVars> {
        let (theta_alpha, theta_beta) = if trainable {
            (tape.param(self.theta_alpha.clone()), tape.param(self.theta_beta.clone()))
        } else {
            (tape.constant(self.theta_alpha.clone()), tape.constant(self.theta_beta.clone()))
        };
        let abs_a = tape.abs(theta_alpha)?;
        let neg_a = tape.neg(abs_a)?;
        let shifted = tape.add_scalar(neg_a, 1.0 - self.epsilon)?;
        let alpha = tape.relu(shifted)?;

        let abs_b = tape.abs(theta_beta)?;
        let neg_b = tape.neg(abs_b)?;
        let shifted_b = tape.add_scalar(neg_b, 1.0)?;
        let frac = tape.relu(shifted_b)?;
        let a2 = tape.mul(alpha, alpha)?;
        let neg_a2 = tape.neg(a2)?;
        let rem = tape.add_scalar(neg_a2, 1.0)?;
        let ceiling = tape.sqrt(rem)?;
        let beta = tape.mul(frac, ceiling)?;
        Ok(JnfVars {
            theta_alpha,
            theta_beta,
            alpha,
            beta,
        })
    }
}

/// Per-block `(α, β)` from the unconstrained parameters.
pub fn jnf_map(p: &JnfParams) -> Vec<(f64, f64)> {
    p.theta_alpha
        .data()
        .iter()
        .zip(p.theta_beta.data())
        .map(|(&ta, &tb)| {
            let alpha = ((1.0 - p.epsilon) - ta.abs()).max(0.0);
            let beta = (1.0 - tb.abs()).max(0.0) * (1.0 - alpha * alpha).sqrt();
            (alpha, beta)
        })
        .collect()
}

/// Block-diagonal real-JNF state matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    blocks: Vec<(f64, f64)>,
}

pub fn build_state_matrix(p: &JnfParams) -> StateMatrix {
    StateMatrix::from_blocks(jnf_map(p))
}

impl StateMatrix {
    pub fn from_blocks(blocks: Vec<(f64, f64)>) -> Self {
        StateMatrix { blocks }
    }

    /// Builds from a state dimension and flat `(α, β)` lists; odd `n` is a
    /// configuration error.
    pub fn from_parts(n: usize, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        if !n.is_multiple_of(2) {
            return Err(IleError::Config(format!("state dimension must be even, got {n}")));
        }
        if alpha.len() != n / 2 || beta.len() != n / 2 {
            return Err(IleError::Config(format!("{n}-dimensional state needs {} blocks", n / 2)));
        }
        Ok(StateMatrix::from_blocks(alpha.iter().copied().zip(beta.iter().copied()).collect()))
    }

    pub fn blocks(&self) -> &[(f64, f64)] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        2 * self.blocks.len()
    }

    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        self.blocks.iter().copied().unzip()
    }

    pub fn dense(&self) -> Tensor {
        let n = self.n();
        let mut a = Tensor::zeros(&[n, n]);
        for (k, &(al, be)) in self.blocks.iter().enumerate() {
            let i = 2 * k;
            a.set(i, i, al);
            a.set(i, i + 1, be);
            a.set(i + 1, i, -be);
            a.set(i + 1, i + 1, al);
        }
        a
    }

    /// Closed form for the block-diagonal case: `max_k √(α_k² + β_k²)`.
    pub fn spectral_radius(&self) -> f64 {
        self.blocks
            .iter()
            .map(|&(a, b)| a.hypot(b))
            .fold(0.0, f64::max)
    }

    /// Eigenvalue moduli, one per block.
    pub fn eigen_moduli(&self) -> Vec<f64> {
        self.blocks.iter().map(|&(a, b)| a.hypot(b)).collect()
    }

    /// `m · A`.
    pub fn right_mul(&self, m: &Tensor) -> Result<Tensor> {
        let (al, be) = self.split();
        linalg::jnf_right_mul(m, &al, &be)
    }

    /// `A · x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() {
            return Err(dim_err("state_apply", format!("{} vs {}", x.len(), self.n())));
        }
        let mut out = vec![0.0; x.len()];
        for (k, &(a, b)) in self.blocks.iter().enumerate() {
            let (u, v) = (x[2 * k], x[2 * k + 1]);
            out[2 * k] = a * u + b * v;
            out[2 * k + 1] = -b * u + a * v;
        }
        Ok(out)
    }
}

/// Dense `D × n` observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix(pub Tensor);

impl ObservationMatrix {
    pub fn new(entries: Tensor) -> Result<Self> {
        if entries.shape().len() != 2 {
            return Err(IleError::Shape(format!("C must be a matrix, got {:?}", entries.shape())));
        }
        entries.ensure_finite("observation matrix")?;
        Ok(ObservationMatrix(entries))
    }

    /// Small Gaussian entries, `std = 0.1 / √n`.
    pub fn init<R: Rng>(obs_dim: usize, state_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1 / (state_dim as f64).sqrt()).expect("finite std");
        let data = (0..obs_dim * state_dim).map(|_| normal.sample(rng)).collect();
        ObservationMatrix(Tensor::from_parts(vec![obs_dim, state_dim], data))
    }

    pub fn obs_dim(&self) -> usize {
        self.0.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.0.cols()
    }
}

/// `[C; CA; …; CA^{T−1}]`, shape `T·D × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityStack {
    pub rows: Tensor,
    pub horizon: usize,
    pub obs_dim: usize,
}

impl ObservabilityStack {
    pub fn block(&self, t: usize) -> Tensor {
        let n = self.rows.cols();
        let d = self.obs_dim;
        let slice = self.rows.data()[t * d * n..(t + 1) * d * n].to_vec();
        Tensor::from_parts(vec![d, n], slice)
    }
}

fn check_system(a: &StateMatrix, c: &ObservationMatrix) -> Result<()> {
    if c.state_dim() != a.n() {
        return Err(dim_err("lti", format!("C has {} columns, A is {}x{}", c.state_dim(), a.n(), a.n())));
    }
    Ok(())
}

/// Built iteratively: each block is the previous one right-multiplied by `A`.
pub fn observability_stack(a: &StateMatrix, c: &ObservationMatrix, horizon: usize) -> Result<ObservabilityStack> {
    check_system(a, c)?;
    if horizon == 0 {
        return Err(IleError::Config("horizon must be >= 1".into()));
    }
    let mut blocks = Vec::with_capacity(horizon);
    blocks.push(c.0.clone());
    for t in 1..horizon {
        let next = a.right_mul(&blocks[t - 1])?;
        blocks.push(next);
    }
    let refs: Vec<&Tensor> = blocks.iter().collect();
    Ok(ObservabilityStack {
        rows: Tensor::concat_rows(&refs)?,
        horizon,
        obs_dim: c.obs_dim(),
    })
}

/// Traced observability stack from traced `C` and block parameters.
pub fn trace_observability(tape: &mut Tape, c: Var, jnf: &JnfVars, horizon: usize) -> Result<Var> {
    let mut blocks = Vec::with_capacity(horizon);
    blocks.push(c);
    for t in 1..horizon {
        let next = tape.jnf_right_mul(blocks[t - 1], jnf.alpha, jnf.beta)?;
        blocks.push(next);
    }
    tape.concat_rows(&blocks)
}

/// Least-squares initial state `x₀ = argmin ‖Z − O x‖² + λ‖x‖²`, with `Z`
/// the row-major stack of the `T` embeddings.
pub fn infer_initial_state(o: &ObservabilityStack, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if z.len() != o.rows.rows() {
        return Err(dim_err("infer_initial_state", format!("Z has {} entries, O has {} rows", z.len(), o.rows.rows())));
    }
    let rhs = Tensor::column(z.to_vec())?;
    Ok(linalg::ridge_solve(&o.rows, &rhs, lambda)?.into_data())
}

/// Mean trajectory `ẑ_t = C A^t x₀`, one row per step.
pub fn rollout(a: &StateMatrix, c: &ObservationMatrix, x0: &[f64], horizon: usize) -> Result<Tensor> {
    check_system(a, c)?;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(horizon * c.obs_dim());
    for t in 0..horizon {
        if t > 0 {
            x = a.apply(&x)?;
        }
        let z = c.0.matmul(&Tensor::column(x.clone())?)?;
        out.extend_from_slice(z.data());
    }
    Tensor::from_parts(vec![horizon, c.obs_dim()], out).checked("rollout")
}

/// Rollout plus i.i.d. Gaussian observation noise.
pub fn simulate_lti<R: Rng>(
    a: &StateMatrix,
    c: &ObservationMatrix,
    x0: &[f64],
    horizon: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Tensor> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(IleError::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut z = rollout(a, c, x0, horizon)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite std");
        for v in z.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(z)
}

/// Posterior mean of `x₀` under a `N(0, σ₀² I)` prior, unit observation
/// noise and no process noise, accumulated in information form one
/// observation at a time.
pub fn smoother_oracle(a: &StateMatrix, c: &ObservationMatrix, z: &Tensor, prior_var: f64) -> Result<Vec<f64>> {
    check_system(a, c)?;
    if z.cols() != c.obs_dim() {
        return Err(dim_err("smoother_oracle", format!("{:?} vs D = {}", z.shape(), c.obs_dim())));
    }
    if !(prior_var > 0.0) {
        return Err(IleError::Config("prior variance must be positive".into()));
    }
    let n = a.n();
    let d = c.obs_dim();
    let a_dense = DMatrix::from_row_slice(n, n, a.dense().data());
    let mut h = DMatrix::from_row_slice(d, n, c.0.data());
    let mut info = DMatrix::<f64>::identity(n, n) / prior_var;
    let mut eta = DVector::<f64>::zeros(n);
    for t in 0..z.rows() {
        let zt = DVector::from_row_slice(z.row(t));
        info += h.transpose() * &h;
        eta += h.transpose() * zt;
        h = &h * &a_dense;
    }
    let chol = info
        .cholesky()
        .ok_or_else(|| IleError::Singular("smoother information matrix".into()))?;
    let x = chol.solve(&eta);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IleError::Numeric("smoother_oracle".into()));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rotation() -> StateMatrix {
        StateMatrix::from_blocks(vec![(0.0, 1.0)])
    }

    #[test]
    fn jnf_map_boundaries() {
        let p = JnfParams::new(vec![0.0, 2.0, 0.5], vec![1.0, 0.0, 0.5]).unwrap();
        let m = jnf_map(&p);
        assert_eq!(m[0], (1.0 - 1e-14, 0.0));
        assert_eq!(m[1], (0.0, 1.0));
        assert!((m[2].0 - 0.5).abs() < 1e-13);
        assert!((m[2].1 - 0.4330127018922193).abs() < 1e-13);
    }

    #[test]
    fn epsilon_range_enforced() {
        assert!(JnfParams::with_epsilon(vec![0.0], vec![0.0], 0.0).is_err());
        assert!(JnfParams::with_epsilon(vec![0.0], vec![0.0], 1e-3).is_err());
    }

    #[test]
    fn state_matrix_forms() {
        let a = build_state_matrix(&JnfParams::new(vec![2.0], vec![0.0]).unwrap());
        assert_eq!(a.dense().data(), &[0.0, 1.0, -1.0, 0.0]);
        let ident = build_state_matrix(&JnfParams::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap());
        assert!(ident.dense().max_abs_diff(&Tensor::identity(4)) < 1e-13);
        assert!(StateMatrix::from_parts(3, &[0.5], &[0.5]).is_err());
        assert!(JnfParams::init(5, DEFAULT_EPSILON, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn spectral_radius_cases() {
        assert!((StateMatrix::from_blocks(vec![(1.0 - 1e-14, 0.0)]).spectral_radius() - 1.0).abs() < 1e-13);
        assert_eq!(StateMatrix::from_blocks(vec![(0.6, 0.8)]).spectral_radius(), 1.0);
    }

    #[test]
    fn from_blocks_inverts_the_map() {
        let blocks = [(0.9, 0.2), (0.3, 0.5), (0.0, 1.0)];
        let p = JnfParams::from_blocks(&blocks, DEFAULT_EPSILON).unwrap();
        for (got, want) in jnf_map(&p).iter().zip(blocks) {
            assert!((got.0 - want.0).abs() < 1e-14 && (got.1 - want.1).abs() < 1e-14);
        }
        assert!(JnfParams::from_blocks(&[(0.9, 0.9)], DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn init_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = JnfParams::init(20, DEFAULT_EPSILON, &mut rng).unwrap();
        for (a, b) in jnf_map(&p) {
            assert!((0.85..1.0).contains(&a));
            assert!(b <= 0.1 * (1.0 - a * a).sqrt() + 1e-15);
        }
    }

    #[test]
    fn observability_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = ObservationMatrix::init(3, 4, &mut rng);
        let a = StateMatrix::from_blocks(vec![(0.7, 0.2), (0.5, -0.1)]);
        let o1 = observability_stack(&a, &c, 1).unwrap();
        assert_eq!(o1.rows, c.0);
        let ident = StateMatrix::from_blocks(vec![(1.0, 0.0), (1.0, 0.0)]);
        let o = observability_stack(&ident, &c, 3).unwrap();
        for t in 0..3 {
            assert_eq!(o.block(t), c.0);
        }
        let o = observability_stack(&a, &c, 5).unwrap();
        for t in 1..5 {
            let expect = o.block(t - 1).matmul(&a.dense()).unwrap();
            assert!(o.block(t).max_abs_diff(&expect) < 1e-12);
        }
        assert!(observability_stack(&a, &c, 0).is_err());
    }

    #[test]
    fn rotation_stack_quarter_turns() {
        let c = ObservationMatrix::new(Tensor::identity(2)).unwrap();
        let o = observability_stack(&rotation(), &c, 4).unwrap();
        let r = Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let mut expect = Tensor::identity(2);
        for t in 0..4 {
            assert!(o.block(t).max_abs_diff(&expect) < 1e-15);
            expect = expect.matmul(&r).unwrap();
        }
    }

    #[test]
    fn infer_rotation_exact_fit() {
        let c = ObservationMatrix::new(Tensor::identity(2)).unwrap();
        let o = observability_stack(&rotation(), &c, 2).unwrap();
        let x0 = infer_initial_state(&o, &[1.0, 0.0, 0.0, -1.0], 0.0).unwrap();
        assert!((x0[0] - 1.0).abs() < 1e-15 && x0[1].abs() < 1e-15);
        let xs = smoother_oracle(&rotation(), &c, &Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap(), 1e8).unwrap();
        assert!((xs[0] - 1.0).abs() < 1e-8 && xs[1].abs() < 1e-8);
    }

    #[test]
    fn infer_ridge_mean() {
        let c = ObservationMatrix::new(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        let a = build_state_matrix(&JnfParams::new(vec![0.0], vec![1.0]).unwrap());
        let o = observability_stack(&a, &c, 2).unwrap();
        let x0 = infer_initial_state(&o, &[0.0, 2.0], 1e-8).unwrap();
        assert!((x0[0] - 1.0).abs() <= 1e-7 && x0[1].abs() <= 1e-7);
        assert!(matches!(infer_initial_state(&o, &[0.0, 2.0], 0.0), Err(IleError::Singular(_))));
        assert!(infer_initial_state(&o, &[0.0], 1e-8).is_err());
    }

    #[test]
    fn rollout_cases() {
        let c = ObservationMatrix::new(Tensor::identity(2)).unwrap();
        let ident = StateMatrix::from_blocks(vec![(1.0, 0.0)]);
        let z = rollout(&ident, &c, &[0.3, -0.4], 5).unwrap();
        for t in 0..5 {
            assert_eq!(z.row(t), &[0.3, -0.4]);
        }
        let z = rollout(&StateMatrix::from_blocks(vec![(0.6, 0.8)]), &c, &[0.3, -0.4], 20).unwrap();
        for t in 0..20 {
            let norm = z.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 0.5).abs() < 1e-12);
        }
        let z = rollout(&StateMatrix::from_blocks(vec![(0.9, 0.0)]), &c, &[1.0, 0.0], 30).unwrap();
        for t in 0..30 {
            assert!((z.get(t, 0) - 0.9f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_noise_free_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ObservationMatrix::init(3, 4, &mut rng);
        let a = StateMatrix::from_blocks(vec![(0.8, 0.3), (0.2, 0.9)]);
        let x0 = [1.0, -0.5, 0.25, 2.0];
        let z = simulate_lti(&a, &c, &x0, 7, 0.0, &mut rng).unwrap();
        assert_eq!(z, rollout(&a, &c, &x0, 7).unwrap());
        let z1 = simulate_lti(&a, &c, &x0, 7, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let z2 = simulate_lti(&a, &c, &x0, 7, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(z1.data(), z2.data());
        assert!(simulate_lti(&a, &c, &x0, 7, -1.0, &mut rng).is_err());
    }

    #[test]
    fn smoother_shrinks_with_tight_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = ObservationMatrix::init(3, 4, &mut rng);
        let a = StateMatrix::from_blocks(vec![(0.8, 0.3), (0.2, 0.9)]);
        let z = rollout(&a, &c, &[1.0, 2.0, -1.0, 0.5], 10).unwrap();
        let ls = smoother_oracle(&a, &c, &z, 1e8).unwrap();
        let tight = smoother_oracle(&a, &c, &z, 1e-6).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&tight) < 1e-3 * norm(&ls));
    }
}
