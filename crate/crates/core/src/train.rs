//! Batched gradient steps over the sequence objective.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{IleError, Result};
use crate::model::{sequence_loss_grad, IleConfig, IleModel, LossBreakdown, Trainable};
use crate::tensor::Tensor;

/// Global gradient-norm ceiling applied before every update.
pub const CLIP_NORM: f64 = 10.0;
pub const ADAM_EPS: f64 = 1e-8;
/// Consecutive rejected steps after which a run is abandoned.
pub const MAX_REJECTED_STREAK: usize = 10;

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Number of applied updates.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &IleConfig, model: &IleModel) -> Self {
        let zeros: Vec<Tensor> = model
            .named_params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((x, &gi), (mi, vi)) in iter {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// One optimizer step on a batch of `[T, D]` sequences.
///
/// Per-sequence gradients are computed in parallel and summed in batch
/// order. On any error the model and optimizer are left untouched.
pub fn train_step(
    model: &mut IleModel,
    opt: &mut Adam,
    batch: &[&Tensor],
    cfg: &IleConfig,
    trainable: Trainable,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(IleError::Config("empty batch".into()));
    }
    let horizon = batch[0].rows();
    if batch.iter().any(|s| s.rows() != horizon) {
        return Err(IleError::Config("batch sequences differ in length".into()));
    }
    let shared: &IleModel = model;
    let results: Vec<Result<(LossBreakdown, Vec<Tensor>)>> = batch
        .par_iter()
        .map(|frames| sequence_loss_grad(shared, frames, cfg, trainable, None))
        .collect();

    let mut losses = Vec::with_capacity(batch.len());
    let mut total: Option<Vec<Tensor>> = None;
    for r in results {
        let (lb, grads) = r?;
        losses.push(lb);
        total = Some(match total {
            None => grads,
            Some(acc) => acc
                .iter()
                .zip(&grads)
                .map(|(a, g)| a.add(g))
                .collect::<Result<_>>()?,
        });
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads: Vec<Tensor> = total.expect("non-empty batch").iter().map(|g| g.scale(inv)).collect();
    for g in &grads {
        g.ensure_finite("batch gradient")?;
    }
    clip_gradients(&mut grads, CLIP_NORM);
    opt.update(model.params_mut(), &grads);
    Ok(LossBreakdown::mean(&losses))
}

/// Batch members for a given step: a function of `(seed, step)` only, so a
/// resumed run draws the same batches as an uninterrupted one.
pub fn batch_indices(seed: u64, step: u64, count: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    if batch >= count {
        (0..count).collect()
    } else {
        let mut idx = index::sample(&mut rng, count, batch).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// One line of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub loss: LossBreakdown,
    pub spectral_radius: f64,
}

pub const TRACE_HEADER: &str = "step,predictive,logdet_term,scale_term,total,gamma,spectral_radius";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step, l.predictive, l.logdet_term, l.scale_term, l.total, l.gamma, self.spectral_radius
        )
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: IleModel,
    pub opt: Adam,
    /// Steps attempted so far, rejected ones included.
    pub step: u64,
}

impl TrainState {
    pub fn init(cfg: &IleConfig) -> Result<Self> {
        let model = IleModel::init(cfg)?;
        let opt = Adam::new(cfg, &model);
        Ok(TrainState { model, opt, step: 0 })
    }
}

/// Drives [`train_step`] over a dataset of `[T, D]` sequences.
pub struct Trainer<'a> {
    pub cfg: IleConfig,
    pub trainable: Trainable,
    pub state: TrainState,
    data: &'a [Tensor],
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: IleConfig, state: TrainState, data: &'a [Tensor]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(IleError::Config("training set is empty".into()));
        }
        Ok(Trainer {
            cfg,
            trainable: Trainable::default(),
            state,
            data,
        })
    }

    pub fn with_trainable(mut self, trainable: Trainable) -> Self {
        self.trainable = trainable;
        self
    }

    /// Runs `steps` more steps, handing every accepted step to `on_step`.
    /// Aborts after [`MAX_REJECTED_STREAK`] consecutive numeric failures.
    pub fn run(&mut self, steps: usize, mut on_step: impl FnMut(&TraceRow)) -> Result<()> {
        let mut streak = 0;
        for _ in 0..steps {
            let step = self.state.step;
            let idx = batch_indices(self.cfg.seed, step, self.data.len(), self.cfg.batch);
            let batch: Vec<&Tensor> = idx.iter().map(|&i| &self.data[i]).collect();
            let outcome = train_step(
                &mut self.state.model,
                &mut self.state.opt,
                &batch,
                &self.cfg,
                self.trainable,
            );
            self.state.step += 1;
            match outcome {
                Ok(loss) => {
                    streak = 0;
                    on_step(&TraceRow {
                        step,
                        loss,
                        spectral_radius: self.state.model.state_matrix().spectral_radius(),
                    });
                }
                Err(e @ (IleError::Numeric(_) | IleError::Singular(_))) => {
                    streak += 1;
                    log::warn!("step {step} rejected: {e}");
                    if streak >= MAX_REJECTED_STREAK {
                        return Err(IleError::Numeric(format!(
                            "{MAX_REJECTED_STREAK} consecutive rejected steps, last at step {step}: {e}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Like [`Self::run`], writing the loss trace as CSV to `out`.
    pub fn run_with_trace<W: Write>(&mut self, steps: usize, out: &mut W) -> Result<Vec<TraceRow>> {
        writeln!(out, "{TRACE_HEADER}")?;
        let mut rows = Vec::new();
        let mut io_err = None;
        self.run(steps, |row| {
            if io_err.is_none() {
                if let Err(e) = writeln!(out, "{}", row.to_csv()) {
                    io_err = Some(e);
                }
            }
            rows.push(*row);
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        Ok(rows)
    }
}
