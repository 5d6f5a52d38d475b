//! PSNR / SSIM scoring of predicted frames against ground truth, and the
//! comparison against repeating the last conditioning frame.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Sequence;
use crate::error::{dim_err, IleError, Result};
use crate::model::{predict_frames, IleConfig, IleModel};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_len(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(dim_err(op, format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(())
}

/// `10·log₁₀(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    same_len(a, b, "psnr")?;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Single-window SSIM over the whole frame (peak 1, population moments).
pub fn ssim(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b, "ssim")?;
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - mu_a, y - mu_b);
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    Ok(((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)))
}

/// Per-horizon scores of one sequence, index `h − 1` for horizon `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScores {
    pub model_psnr: Vec<f64>,
    pub model_ssim: Vec<f64>,
    pub baseline_psnr: Vec<f64>,
    pub baseline_ssim: Vec<f64>,
}

/// Scores one sequence: condition on frames `0..k`, predict `k..k+m`.
pub fn score_sequence(model: &IleModel, seq: &Sequence, k: usize, m: usize, cfg: &IleConfig) -> Result<SequenceScores> {
    if k == 0 || m == 0 {
        return Err(IleError::Config("need k >= 1 and m >= 1".into()));
    }
    if seq.len() < k + m {
        return Err(IleError::Config(format!(
            "sequence of {} frames cannot hold k + m = {}",
            seq.len(),
            k + m
        )));
    }
    let pred = predict_frames(model, &seq.window(0..k)?, m, cfg)?;
    let last = seq.frame(k - 1);
    let mut s = SequenceScores {
        model_psnr: Vec::with_capacity(m),
        model_ssim: Vec::with_capacity(m),
        baseline_psnr: Vec::with_capacity(m),
        baseline_ssim: Vec::with_capacity(m),
    };
    for h in 0..m {
        let truth = seq.frame(k + h);
        s.model_psnr.push(psnr(pred.row(h), truth, 1.0)?);
        s.model_ssim.push(ssim(pred.row(h), truth)?);
        s.baseline_psnr.push(psnr(last, truth, 1.0)?);
        s.baseline_ssim.push(ssim(last, truth)?);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonRow {
    pub horizon: usize,
    pub model_psnr: f64,
    pub model_ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

/// Mean scores per horizon over a set of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<HorizonRow>,
    pub sequences: usize,
}

pub const REPORT_HEADER: &str = "horizon,model_psnr,model_ssim,baseline_psnr,baseline_ssim";

impl EvalReport {
    pub fn from_scores(scores: &[SequenceScores]) -> Result<Self> {
        let first = scores
            .first()
            .ok_or_else(|| IleError::Config("no sequences to evaluate".into()))?;
        let m = first.model_psnr.len();
        let n = scores.len() as f64;
        let mean = |f: &dyn Fn(&SequenceScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        let rows = (0..m)
            .map(|h| HorizonRow {
                horizon: h + 1,
                model_psnr: mean(&|s| s.model_psnr[h]),
                model_ssim: mean(&|s| s.model_ssim[h]),
                baseline_psnr: mean(&|s| s.baseline_psnr[h]),
                baseline_ssim: mean(&|s| s.baseline_ssim[h]),
            })
            .collect();
        Ok(EvalReport {
            rows,
            sequences: scores.len(),
        })
    }

    pub fn row(&self, horizon: usize) -> Option<&HorizonRow> {
        self.rows.get(horizon.checked_sub(1)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.horizon, r.model_psnr, r.model_ssim, r.baseline_psnr, r.baseline_ssim
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Per-sequence scores for every sequence, in dataset order.
pub fn score_dataset(model: &IleModel, data: &[Sequence], k: usize, m: usize, cfg: &IleConfig) -> Result<Vec<SequenceScores>> {
    data.par_iter()
        .map(|s| score_sequence(model, s, k, m, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

pub fn evaluate(model: &IleModel, data: &[Sequence], k: usize, m: usize, cfg: &IleConfig) -> Result<EvalReport> {
    EvalReport::from_scores(&score_dataset(model, data, k, m, cfg)?)
}
