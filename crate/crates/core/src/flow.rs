//! Invertible encoder built from affine coupling layers.
//!
//! Each layer keeps the left half of its input, uses it to predict a
//! log-scale and a shift for the right half, then applies a fixed
//! permutation:
//!
//! ```text
//! u    = [h_l ; exp(ŝ(h_l)) ⊙ h_r + b(h_l)]
//! next = P u            (next[i] = u[perm[i]])
//! ```
//!
//! Frames are handled as rows, so a whole sequence is one `[T, D]` matrix.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, IleError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest dimension accepted by [`FlowNetwork::brute_force_logdet`].
pub const BRUTE_FORCE_MAX_DIM: usize = 16;

/// Two-layer feed-forward map `tanh(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct SubnetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in t.data_mut() {
            *v = normal.sample(rng);
        }
    }
    t
}

impl Subnet {
    /// Hidden layer scaled by fan-in, output layer zero so the subnet
    /// starts as the constant zero map.
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Subnet {
            w1: gaussian(rng, &[input, hidden], 1.0 / (input as f64).sqrt()),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[1, output]),
        }
    }

    fn randomized(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng, std: f64) -> Self {
        Subnet {
            w1: gaussian(rng, &[input, hidden], 1.0 / (input as f64).sqrt()),
            b1: gaussian(rng, &[1, hidden], std),
            w2: gaussian(rng, &[hidden, output], std / (hidden as f64).sqrt()),
            b2: gaussian(rng, &[1, output], std),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.matmul(&self.w1)?.add_row(&self.b1)?.map(f64::tanh);
        h.matmul(&self.w2)?.add_row(&self.b2)
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> SubnetVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        SubnetVars {
            w1: reg(&self.w1),
            b1: reg(&self.b1),
            w2: reg(&self.w2),
            b2: reg(&self.b2),
        }
    }

    pub fn trace(tape: &mut Tape, vars: &SubnetVars, x: Var) -> Result<Var> {
        let a = tape.matmul(x, vars.w1)?;
        let a = tape.add_row(a, vars.b1)?;
        let h = tape.tanh(a)?;
        let o = tape.matmul(h, vars.w2)?;
        tape.add_row(o, vars.b2)
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One affine coupling step followed by a fixed permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    pub scale: Subnet,
    pub shift: Subnet,
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub scale: SubnetVars,
    pub shift: SubnetVars,
}

/// Inverse of a permutation given as `out[i] = in[perm[i]]`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}

impl CouplingLayer {
    /// Left half size; odd `dim` puts the extra element on the left.
    pub fn left_len(&self) -> usize {
        self.dim.div_ceil(2)
    }

    pub fn right_len(&self) -> usize {
        self.dim / 2
    }

    pub fn new(dim: usize, hidden: usize, perm: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim < 2 {
            return Err(IleError::Config(format!("flow dimension must be >= 2, got {dim}")));
        }
        if perm.len() != dim || !is_permutation(&perm) {
            return Err(IleError::Config("layer permutation is not a bijection".into()));
        }
        let (l, r) = (dim.div_ceil(2), dim / 2);
        Ok(CouplingLayer {
            dim,
            scale: Subnet::new(l, hidden, r, rng),
            shift: Subnet::new(l, hidden, r, rng),
            perm,
        })
    }

    fn split(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        if h.cols() != self.dim || h.shape().len() != 2 {
            return Err(dim_err("coupling", format!("{:?} vs dim {}", h.shape(), self.dim)));
        }
        let l = self.left_len();
        let left: Vec<usize> = (0..l).collect();
        let right: Vec<usize> = (l..self.dim).collect();
        Ok((h.select_cols(&left)?, h.select_cols(&right)?))
    }

    /// Forward pass over the rows of `h`; returns the per-row log-determinant.
    pub fn forward_rows(&self, h: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (left, right) = self.split(h)?;
        let log_s = self.scale.forward(&left)?.checked("coupling scale subnet")?;
        let shift = self.shift.forward(&left)?.checked("coupling shift subnet")?;
        let new_right = log_s.map(f64::exp).mul(&right)?.add(&shift)?;
        let out = left.concat_cols(&new_right)?.select_cols(&self.perm)?;
        let r = self.right_len();
        let logdet = log_s.data().chunks(r).map(|c| c.iter().sum()).collect();
        Ok((out, logdet))
    }

    pub fn inverse_rows(&self, out: &Tensor) -> Result<Tensor> {
        if out.cols() != self.dim {
            return Err(dim_err("coupling_inverse", format!("{:?} vs dim {}", out.shape(), self.dim)));
        }
        let u = out.select_cols(&invert_permutation(&self.perm))?;
        let (left, new_right) = self.split(&u)?;
        let log_s = self.scale.forward(&left)?.checked("coupling scale subnet")?;
        let shift = self.shift.forward(&left)?.checked("coupling shift subnet")?;
        let right = new_right.sub(&shift)?.mul(&log_s.map(|s| (-s).exp()))?;
        left.concat_cols(&right)?.checked("coupling_inverse")
    }

    /// Single-vector forward: `(h_next, log|det J|)`.
    pub fn forward(&self, h: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (out, ld) = self.forward_rows(&Tensor::matrix(1, h.len(), h.to_vec())?)?;
        Ok((out.into_data(), ld[0]))
    }

    pub fn inverse(&self, h_next: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .inverse_rows(&Tensor::matrix(1, h_next.len(), h_next.to_vec())?)?
            .into_data())
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        LayerVars {
            scale: self.scale.register(tape, trainable),
            shift: self.shift.register(tape, trainable),
        }
    }

    /// Traced forward; returns the output and the sum of log-scales.
    pub fn trace(&self, tape: &mut Tape, vars: &LayerVars, h: Var) -> Result<(Var, Var)> {
        let l = self.left_len();
        let left_idx: Vec<usize> = (0..l).collect();
        let right_idx: Vec<usize> = (l..self.dim).collect();
        let left = tape.select_cols(h, &left_idx)?;
        let right = tape.select_cols(h, &right_idx)?;
        let log_s = Subnet::trace(tape, &vars.scale, left)?;
        let shift = Subnet::trace(tape, &vars.shift, left)?;
        let s = tape.exp(log_s)?;
        let scaled = tape.mul(s, right)?;
        let new_right = tape.add(scaled, shift)?;
        let u = tape.concat_cols(left, new_right)?;
        let out = tape.select_cols(u, &self.perm)?;
        let logdet = tape.sum(log_s)?;
        Ok((out, logdet))
    }
}

/// Stack of coupling layers: `z = g⁻¹(o)` on encode, `o = g(z)` on decode.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    pub dim: usize,
    pub hidden: usize,
    pub layers: Vec<CouplingLayer>,
}

impl FlowNetwork {
    /// Identity-initialized network. Layer 0 keeps the natural order; later
    /// layers get permutations drawn from `seed`.
    pub fn new(dim: usize, depth: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(IleError::Config(format!("flow dimension must be >= 2, got {dim}")));
        }
        if depth == 0 || hidden == 0 {
            return Err(IleError::Config("flow depth and hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let mut perm: Vec<usize> = (0..dim).collect();
            if i > 0 {
                perm.shuffle(&mut rng);
            }
            layers.push(CouplingLayer::new(dim, hidden, perm, &mut rng)?);
        }
        Ok(FlowNetwork { dim, hidden, layers })
    }

    /// Network with every subnet weight drawn at random (output layers
    /// included), so no layer is the identity.
    pub fn with_random_weights(dim: usize, depth: usize, hidden: usize, seed: u64, std: f64) -> Result<Self> {
        let mut net = FlowNetwork::new(dim, depth, hidden, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let (l, r) = (dim.div_ceil(2), dim / 2);
        for layer in &mut net.layers {
            layer.scale = Subnet::randomized(l, hidden, r, &mut rng, std);
            layer.shift = Subnet::randomized(l, hidden, r, &mut rng, std);
        }
        Ok(net)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Encodes every row of `frames`; returns embeddings and per-row
    /// `log|det ∂z/∂o|`.
    pub fn encode_rows(&self, frames: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut h = frames.clone();
        h.ensure_finite("encode input")?;
        let mut logdet = vec![0.0; frames.rows()];
        for layer in &self.layers {
            let (next, ld) = layer.forward_rows(&h)?;
            for (acc, v) in logdet.iter_mut().zip(ld) {
                *acc += v;
            }
            h = next;
        }
        Ok((h, logdet))
    }

    pub fn decode_rows(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        h.ensure_finite("decode input")?;
        for layer in self.layers.iter().rev() {
            h = layer.inverse_rows(&h)?;
        }
        Ok(h)
    }

    pub fn encode(&self, frame: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.encode_rows(&Tensor::matrix(1, frame.len(), frame.to_vec())?)?;
        Ok((z.into_data(), ld[0]))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_rows(&Tensor::matrix(1, z.len(), z.to_vec())?)?.into_data())
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerVars> {
        self.layers.iter().map(|l| l.register(tape, trainable)).collect()
    }

    /// Traced encode of a `[T, D]` frame matrix. Returns the embeddings and
    /// the total log-determinant summed over rows and layers.
    pub fn trace_encode(&self, tape: &mut Tape, vars: &[LayerVars], frames: Var) -> Result<(Var, Var)> {
        let mut h = frames;
        let mut total: Option<Var> = None;
        for (layer, lv) in self.layers.iter().zip(vars) {
            let (next, ld) = layer.trace(tape, lv, h)?;
            total = Some(match total {
                Some(t) => tape.add(t, ld)?,
                None => ld,
            });
            h = next;
        }
        let total = match total {
            Some(t) => t,
            None => tape.constant(Tensor::scalar(0.0)),
        };
        Ok((h, total))
    }

    /// `log|det ∂encode(frame)/∂frame|` from the full Jacobian, assembled
    /// one reverse pass per output and reduced with an LU determinant.
    pub fn brute_force_logdet(&self, frame: &[f64]) -> Result<f64> {
        let d = self.dim;
        if d > BRUTE_FORCE_MAX_DIM {
            return Err(IleError::Config(format!(
                "brute-force log-determinant limited to dim <= {BRUTE_FORCE_MAX_DIM}, got {d}"
            )));
        }
        if frame.len() != d {
            return Err(dim_err("brute_force_logdet", format!("{} vs {d}", frame.len())));
        }
        let jac = self.jacobian(frame)?;
        let det = DMatrix::from_row_slice(d, d, jac.data()).lu().determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(IleError::Singular("encoder Jacobian".into()));
        }
        Ok(det.abs().ln())
    }

    /// Dense `∂z/∂o` at `frame`, row `i` holding the gradient of `z_i`.
    pub fn jacobian(&self, frame: &[f64]) -> Result<Tensor> {
        let d = self.dim;
        let mut rows = Vec::with_capacity(d * d);
        for i in 0..d {
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.param(Tensor::matrix(1, d, frame.to_vec())?);
            let (z, _) = self.trace_encode(&mut tape, &vars, x)?;
            let zi = tape.pick(z, i)?;
            let g = tape.backward(zi)?;
            rows.extend_from_slice(g.get_or_zero(x).data());
        }
        Tensor::matrix(d, d, rows)
    }

    /// Parameter tensors with stable names, in checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (net, sub) in [("scale", &layer.scale), ("shift", &layer.shift)] {
                for (p, t) in ["w1", "b1", "w2", "b2"].iter().zip(sub.tensors()) {
                    out.push((format!("flow.{i}.{net}.{p}"), t));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.scale.tensors_mut());
            out.extend(layer.shift.tensors_mut());
        }
        out
    }

    /// Flattens [`LayerVars`] in the same order as [`Self::named_params`].
    pub fn flatten_vars(vars: &[LayerVars]) -> Vec<Var> {
        vars.iter()
            .flat_map(|lv| {
                [lv.scale, lv.shift]
                    .into_iter()
                    .flat_map(|s| [s.w1, s.b1, s.w2, s.b2])
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn constant_scale_layer(dim: usize, log_s: f64) -> CouplingLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = CouplingLayer::new(dim, 3, (0..dim).collect(), &mut rng).unwrap();
        layer.scale.b2 = Tensor::matrix(1, dim / 2, vec![log_s; dim / 2]).unwrap();
        layer
    }

    fn random_frame(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_coupling_only_permutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = CouplingLayer::new(4, 5, vec![2, 0, 3, 1], &mut rng).unwrap();
        let h = [1.0, 2.0, 3.0, 4.0];
        let (out, ld) = layer.forward(&h).unwrap();
        assert_eq!(out, vec![3.0, 1.0, 4.0, 2.0]);
        assert_eq!(ld, 0.0);
        assert_eq!(layer.inverse(&out).unwrap(), h.to_vec());
    }

    #[test]
    fn constant_scale_logdet() {
        let layer = constant_scale_layer(4, 2f64.ln());
        let (_, ld) = layer.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((ld - 2.0 * 2f64.ln()).abs() < 1e-15);

        let net = FlowNetwork {
            dim: 4,
            hidden: 3,
            layers: vec![constant_scale_layer(4, 3f64.ln())],
        };
        let (_, ld) = net.encode(&[0.5; 4]).unwrap();
        assert!((ld - 2.1972245773362196).abs() < 1e-12);
        assert!((net.brute_force_logdet(&[0.5; 4]).unwrap() - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_scale_inverse() {
        let layer = constant_scale_layer(4, 2f64.ln());
        let x = layer.inverse(&[7.0, -1.0, 2.0, 4.0]).unwrap();
        assert!((x[2] - 1.0).abs() < 1e-15 && (x[3] - 2.0).abs() < 1e-15);
        assert_eq!(&x[..2], &[7.0, -1.0]);
    }

    #[test]
    fn odd_dimension_splits_left_heavy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = CouplingLayer::new(5, 4, (0..5).collect(), &mut rng).unwrap();
        assert_eq!((layer.left_len(), layer.right_len()), (3, 2));
        let net = FlowNetwork::with_random_weights(5, 3, 6, 3, 0.3).unwrap();
        let o = random_frame(&mut rng, 5);
        let (z, ld) = net.encode(&o).unwrap();
        assert!(net.decode(&z).unwrap().iter().zip(&o).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((ld - net.brute_force_logdet(&o).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn identity_net_permutes_and_zero_maps_to_zero() {
        let net = FlowNetwork::new(6, 4, 8, 9).unwrap();
        let o = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (z, ld) = net.encode(&o).unwrap();
        assert_eq!(ld, 0.0);
        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, o.to_vec());
        assert_eq!(net.brute_force_logdet(&o).unwrap(), 0.0);
        let zero = vec![0.0; 6];
        assert_eq!(net.decode(&net.encode(&zero).unwrap().0).unwrap(), zero);
        assert_eq!(net.layers[0].perm, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn random_layer_logdet_matches_jacobian() {
        let net = FlowNetwork::with_random_weights(6, 1, 7, 21, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = random_frame(&mut rng, 6);
        let (_, ld) = net.layers[0].forward(&o).unwrap();
        assert!((ld - net.brute_force_logdet(&o).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn traced_and_plain_forward_agree() {
        let net = FlowNetwork::with_random_weights(8, 4, 6, 5, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames = Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let (z, ld) = net.encode_rows(&frames).unwrap();
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, true);
        let x = tape.constant(frames);
        let (zt, ldt) = net.trace_encode(&mut tape, &vars, x).unwrap();
        assert!(tape.value(zt).max_abs_diff(&z) < 1e-14);
        assert!((tape.value(ldt).item() - ld.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_rejects_large_dim() {
        let net = FlowNetwork::new(18, 1, 2, 0).unwrap();
        assert!(net.brute_force_logdet(&[0.0; 18]).is_err());
    }

    #[test]
    fn config_errors() {
        assert!(FlowNetwork::new(1, 2, 4, 0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(CouplingLayer::new(3, 2, vec![0, 0, 1], &mut rng).is_err());
    }

    #[test]
    fn non_finite_subnet_output_is_numeric_error() {
        let mut layer = constant_scale_layer(4, 0.0);
        layer.scale.b2 = Tensor::matrix(1, 2, vec![1e6, 0.0]).unwrap();
        assert!(matches!(layer.forward(&[0.0, 0.0, 1.0, 1.0]), Err(IleError::Numeric(_))));
    }
}
