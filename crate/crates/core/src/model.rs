//! The invertible linear embedding objective and frame prediction.
//!
//! A sequence of frames `o_0..o_{T-1}` is encoded frame by frame into
//! `z_t = g⁻¹(o_t)`. The stacked embeddings `Z` are fitted by the best LTI
//! trajectory `Ẑ = O x₀*` with `x₀* = argmin ‖Z − O x‖² + λ‖x‖²`, and
//!
//! ```text
//! L = ½‖(Z − Ẑ)/γ‖² − Σ_t log|det ∂z_t/∂o_t| − c·log γ,   γ = mean |Z|
//! ```
//!
//! `γ` is a detached statistic: it scales the loss but carries no gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, IleError, Result};
use crate::flow::FlowNetwork;
use crate::lti::{
    self, build_state_matrix, infer_initial_state, observability_stack, rollout, JnfParams,
    ObservationMatrix, StateMatrix,
};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Model and optimization settings shared by training, prediction and
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct IleConfig {
    pub height: usize,
    pub width: usize,
    pub flow_depth: usize,
    pub flow_hidden: usize,
    pub state_dim: usize,
    pub seq_len: usize,
    pub cond_len: usize,
    pub ridge_lambda: f64,
    pub gamma_floor: f64,
    /// Multiplier `c` on the `−log γ` term.
    pub gamma_exponent: f64,
    /// When false, gradients flow through `γ` as well.
    pub gamma_detach: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl IleConfig {
    /// Defaults for an `height × width` grid and sequences of `seq_len`
    /// frames; the state dimension defaults to twice the frame size.
    pub fn new(height: usize, width: usize, seq_len: usize) -> Self {
        IleConfig {
            height,
            width,
            flow_depth: 8,
            flow_hidden: 64,
            state_dim: 2 * height * width,
            seq_len,
            cond_len: 4.min(seq_len.saturating_sub(1)).max(1),
            ridge_lambda: 1e-8,
            gamma_floor: 1e-12,
            gamma_exponent: 1.0,
            gamma_detach: true,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch: 8,
            steps: 1000,
            seed: 0,
            epsilon: lti::DEFAULT_EPSILON,
        }
    }

    /// Flattened frame size `D = H·W`.
    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IleError::Config(msg));
        let d = self.dim();
        if d < 2 {
            return bad(format!("frame must have at least 2 pixels, got {}x{}", self.height, self.width));
        }
        if self.flow_depth == 0 || self.flow_hidden == 0 {
            return bad("flow.depth and flow.hidden must be positive".into());
        }
        if self.state_dim == 0 || !self.state_dim.is_multiple_of(2) {
            return bad(format!("state.dim must be even and positive, got {}", self.state_dim));
        }
        if self.cond_len < 1 || self.seq_len <= self.cond_len {
            return bad(format!("need 1 <= cond.len < seq.len, got {} and {}", self.cond_len, self.seq_len));
        }
        if self.state_dim > self.seq_len * d {
            return bad(format!(
                "state.dim {} exceeds seq.len·D = {}",
                self.state_dim,
                self.seq_len * d
            ));
        }
        if !(self.ridge_lambda >= 0.0) || !(self.gamma_floor > 0.0) || !self.gamma_exponent.is_finite() {
            return bad("ridge.lambda >= 0, gamma.floor > 0 and a finite gamma.exponent required".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("opt.lr > 0 and opt.beta1, opt.beta2 in [0, 1) required".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return bad(format!("jnf.epsilon must lie in (0, 1e-6], got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub flow: bool,
    pub dynamics: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable {
            flow: true,
            dynamics: true,
        }
    }
}

/// The learned triple: encoder `g`, state matrix `A`, observation matrix `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct IleModel {
    pub flow: FlowNetwork,
    pub jnf: JnfParams,
    pub c: ObservationMatrix,
}

impl IleModel {
    pub fn init(cfg: &IleConfig) -> Result<Self> {
        cfg.validate()?;
        let flow = FlowNetwork::new(cfg.dim(), cfg.flow_depth, cfg.flow_hidden, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0f1e));
        let jnf = JnfParams::init(cfg.state_dim, cfg.epsilon, &mut rng)?;
        let c = ObservationMatrix::init(cfg.dim(), cfg.state_dim, &mut rng);
        Ok(IleModel { flow, jnf, c })
    }

    pub fn state_matrix(&self) -> StateMatrix {
        build_state_matrix(&self.jnf)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.flow.named_params();
        out.push(("lti.theta_alpha".into(), &self.jnf.theta_alpha));
        out.push(("lti.theta_beta".into(), &self.jnf.theta_beta));
        out.push(("lti.c".into(), &self.c.0));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.flow.params_mut();
        out.push(&mut self.jnf.theta_alpha);
        out.push(&mut self.jnf.theta_beta);
        out.push(&mut self.c.0);
        out
    }

    /// Parameter groups in [`Self::named_params`] order: `true` for flow.
    pub fn flow_mask(&self) -> Vec<bool> {
        let nflow = self.flow.named_params().len();
        (0..nflow + 3).map(|i| i < nflow).collect()
    }

    fn check_frames(&self, frames: &Tensor) -> Result<()> {
        if frames.shape().len() != 2 || frames.cols() != self.flow.dim || frames.rows() == 0 {
            return Err(dim_err(
                "sequence",
                format!("frames {:?} for D = {}", frames.shape(), self.flow.dim),
            ));
        }
        frames.ensure_finite("input frames")
    }
}

/// Components of the sequence objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `½‖(Z − Ẑ)/γ‖²`
    pub predictive: f64,
    /// `−Σ_t log|det ∂z_t/∂o_t|`
    pub logdet_term: f64,
    /// `−c·log γ`
    pub scale_term: f64,
    pub total: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    fn assemble(predictive: f64, logdet_term: f64, gamma: f64, exponent: f64) -> Result<Self> {
        let scale_term = -exponent * gamma.ln();
        let lb = LossBreakdown {
            predictive,
            logdet_term,
            scale_term,
            total: predictive + logdet_term + scale_term,
            gamma,
        };
        if [lb.predictive, lb.logdet_term, lb.scale_term, lb.total]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(lb)
        } else {
            Err(IleError::Numeric("sequence loss".into()))
        }
    }

    /// Field-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for lb in items {
            m.predictive += lb.predictive;
            m.logdet_term += lb.logdet_term;
            m.scale_term += lb.scale_term;
            m.total += lb.total;
            m.gamma += lb.gamma;
        }
        m.predictive /= n;
        m.logdet_term /= n;
        m.scale_term /= n;
        m.total /= n;
        m.gamma /= n;
        m
    }
}

/// `max(mean |Z|, floor)` over every entry of the stacked embeddings.
pub fn scale_gamma(z: &Tensor, floor: f64) -> f64 {
    let n = z.numel().max(1) as f64;
    let mean = z.data().iter().map(|v| v.abs()).sum::<f64>() / n;
    mean.max(floor)
}

/// `max(mean |Z|, floor)` on the tape; below the floor it is a constant.
fn trace_gamma(tape: &mut Tape, z: Var, floor: f64) -> Result<Var> {
    let n = tape.value(z).numel().max(1) as f64;
    let abs = tape.abs(z)?;
    let total = tape.sum(abs)?;
    let mean = tape.scale(total, 1.0 / n)?;
    if tape.value(mean).item() < floor {
        return Ok(tape.constant(Tensor::scalar(floor)));
    }
    Ok(mean)
}

/// Evaluates the objective without tracing.
pub fn sequence_loss(model: &IleModel, frames: &Tensor, cfg: &IleConfig) -> Result<LossBreakdown> {
    model.check_frames(frames)?;
    let horizon = frames.rows();
    let (z, logdets) = model.flow.encode_rows(frames)?;
    let a = model.state_matrix();
    let o = observability_stack(&a, &model.c, horizon)?;
    let x0 = infer_initial_state(&o, z.data(), cfg.ridge_lambda)?;
    let zhat = rollout(&a, &model.c, &x0, horizon)?;
    let gamma = scale_gamma(&z, cfg.gamma_floor);
    let predictive = 0.5 * z.sub(&zhat)?.sum_sq() / (gamma * gamma);
    LossBreakdown::assemble(predictive, -logdets.iter().sum::<f64>(), gamma, cfg.gamma_exponent)
}

/// A traced evaluation of the objective, ready for [`Tape::backward`].
pub struct TracedLoss {
    pub tape: Tape,
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Handles in [`IleModel::named_params`] order.
    pub params: Vec<Var>,
}

/// Records the objective on a fresh tape. `gamma` overrides the data-derived
/// scale, which lets finite-difference checks hold it fixed.
pub fn trace_sequence_loss(
    model: &IleModel,
    frames: &Tensor,
    cfg: &IleConfig,
    trainable: Trainable,
    gamma: Option<f64>,
) -> Result<TracedLoss> {
    model.check_frames(frames)?;
    let horizon = frames.rows();
    let d = model.flow.dim;
    let mut tape = Tape::new();

    let flow_vars = model.flow.register(&mut tape, trainable.flow);
    let jnf = model.jnf.trace(&mut tape, trainable.dynamics)?;
    let c = if trainable.dynamics {
        tape.param(model.c.0.clone())
    } else {
        tape.constant(model.c.0.clone())
    };
    let mut params = FlowNetwork::flatten_vars(&flow_vars);
    params.extend([jnf.theta_alpha, jnf.theta_beta, c]);

    let x = tape.constant(frames.clone());
    let (z, logdet) = model.flow.trace_encode(&mut tape, &flow_vars, x)?;
    let gamma = match gamma {
        Some(g) => tape.constant(Tensor::scalar(g)),
        None if cfg.gamma_detach => tape.constant(Tensor::scalar(scale_gamma(tape.value(z), cfg.gamma_floor))),
        None => trace_gamma(&mut tape, z, cfg.gamma_floor)?,
    };

    let zvec = tape.reshape(z, &[horizon * d, 1])?;
    let obs = lti::trace_observability(&mut tape, c, &jnf, horizon)?;
    let x0 = tape.ridge_solve(obs, zvec, cfg.ridge_lambda)?;
    let zhat = tape.matmul(obs, x0)?;
    let resid = tape.sub(zvec, zhat)?;
    let sq = tape.mul(resid, resid)?;
    let sse = tape.sum(sq)?;
    let inv = tape.recip(gamma)?;
    let inv2 = tape.mul(inv, inv)?;
    let weighted = tape.mul(sse, inv2)?;
    let predictive = tape.scale(weighted, 0.5)?;
    let neg_logdet = tape.neg(logdet)?;
    let log_gamma = tape.ln(gamma)?;
    let scale_term = tape.scale(log_gamma, -cfg.gamma_exponent)?;
    let data_terms = tape.add(predictive, neg_logdet)?;
    let loss = tape.add(data_terms, scale_term)?;

    let breakdown = LossBreakdown::assemble(
        tape.value(predictive).item(),
        tape.value(neg_logdet).item(),
        tape.value(gamma).item(),
        cfg.gamma_exponent,
    )?;
    Ok(TracedLoss {
        tape,
        loss,
        breakdown,
        params,
    })
}

/// Loss and its gradient, one tensor per entry of
/// [`IleModel::named_params`] (zeros for frozen groups).
pub fn sequence_loss_grad(
    model: &IleModel,
    frames: &Tensor,
    cfg: &IleConfig,
    trainable: Trainable,
    gamma: Option<f64>,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let traced = trace_sequence_loss(model, frames, cfg, trainable, gamma)?;
    let params = traced.params;
    let grads: Gradients = traced.tape.backward(traced.loss)?;
    let out = params.iter().map(|&v| grads.get_or_zero(v)).collect();
    Ok((traced.breakdown, out))
}

/// Infers `x₀` from the conditioning frames only, then returns the
/// embedding-space means `C A^t x₀` for `t = k..k+m−1`.
pub fn predict_embeddings(model: &IleModel, cond: &Tensor, horizon: usize, cfg: &IleConfig) -> Result<Tensor> {
    model.check_frames(cond)?;
    if horizon == 0 {
        return Err(IleError::Config("prediction horizon must be >= 1".into()));
    }
    let k = cond.rows();
    let (z, _) = model.flow.encode_rows(cond)?;
    let a = model.state_matrix();
    let o = observability_stack(&a, &model.c, k)?;
    let x0 = infer_initial_state(&o, z.data(), cfg.ridge_lambda)?;
    let traj = rollout(&a, &model.c, &x0, k + horizon)?;
    let d = model.flow.dim;
    Tensor::matrix(horizon, d, traj.data()[k * d..].to_vec())
}

/// Decoded predictions before clamping to the pixel range.
pub fn predict_frames_unclamped(model: &IleModel, cond: &Tensor, horizon: usize, cfg: &IleConfig) -> Result<Tensor> {
    model.flow.decode_rows(&predict_embeddings(model, cond, horizon, cfg)?)
}

/// `m` future frames after the `k` conditioning frames, clamped to `[0, 1]`.
pub fn predict_frames(model: &IleModel, cond: &Tensor, horizon: usize, cfg: &IleConfig) -> Result<Tensor> {
    Ok(predict_frames_unclamped(model, cond, horizon, cfg)?.map(|v| v.clamp(0.0, 1.0)))
}
