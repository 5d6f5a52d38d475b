//! The four file-level operations behind the `ile` binary.
//!
//! Each reads and writes the on-disk formats (ILSQ datasets, ILEC
//! checkpoints, CSV traces and reports, PGM frames) and returns a summary
//! so callers can print or inspect it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_state, save_state};
use crate::config::{conflicting_keys, ile_config, sprite_config, KvConfig, Split};
use crate::data::{generate_dataset, read_sequences, write_sequences, SeqDims, Sequence};
use crate::error::{IleError, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{predict_frames, IleConfig, LossBreakdown};
use crate::pgm::write_pgm;
use crate::tensor::Tensor;
use crate::train::{TrainState, Trainer};

pub fn generate(config: &Path, split: Split, out: &Path) -> Result<SeqDims> {
    let kv = KvConfig::load(config)?;
    let cfg = sprite_config(&kv, split)?;
    let seqs = generate_dataset(&cfg)?;
    write_sequences(out, &seqs)?;
    Ok(SeqDims {
        len: cfg.seq_len,
        height: cfg.height,
        width: cfg.width,
    })
}

pub struct TrainOptions<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub ckpt_out: &'a Path,
    /// Checkpoint to resume from.
    pub resume: Option<&'a Path>,
    /// Overrides `steps` from the config.
    pub steps: Option<usize>,
    /// Loss trace destination; defaults to `<ckpt_out>.trace.csv`.
    pub trace: Option<&'a Path>,
}

pub struct TrainSummary {
    pub steps_run: usize,
    pub final_step: u64,
    pub last: Option<LossBreakdown>,
    pub trace_path: PathBuf,
}

fn load_frames(path: &Path, cfg: &IleConfig) -> Result<Vec<Sequence>> {
    let (dims, seqs) = read_sequences(path)?;
    if dims.height != cfg.height || dims.width != cfg.width {
        return Err(IleError::Config(format!(
            "dataset frames are {}x{}, model expects {}x{}",
            dims.height, dims.width, cfg.height, cfg.width
        )));
    }
    Ok(seqs)
}

/// Default trace location next to the checkpoint.
pub fn trace_path_for(ckpt_out: &Path) -> PathBuf {
    let mut s = ckpt_out.as_os_str().to_owned();
    s.push(".trace.csv");
    PathBuf::from(s)
}

pub fn train(opts: &TrainOptions) -> Result<TrainSummary> {
    let kv = KvConfig::load(opts.config)?;
    let file_cfg = ile_config(&kv)?;
    let (cfg, state) = match opts.resume {
        Some(p) => {
            let (stored, state) = load_state(p)?;
            warn_conflicts(&stored, &kv);
            (stored, state)
        }
        None => (file_cfg.clone(), TrainState::init(&file_cfg)?),
    };
    let seqs = load_frames(opts.data, &cfg)?;
    if seqs.iter().any(|s| s.len() != cfg.seq_len) {
        return Err(IleError::Config(format!(
            "dataset sequences do not match seq.len = {}",
            cfg.seq_len
        )));
    }
    let frames: Vec<Tensor> = seqs.into_iter().map(|s| s.frames).collect();
    let steps = opts.steps.unwrap_or(cfg.steps);
    let trace_path = opts.trace.map(Path::to_path_buf).unwrap_or_else(|| trace_path_for(opts.ckpt_out));
    let mut trace = BufWriter::new(File::create(&trace_path)?);
    let mut trainer = Trainer::new(cfg.clone(), state, &frames)?;
    let rows = trainer.run_with_trace(steps, &mut trace)?;
    std::io::Write::flush(&mut trace)?;
    save_state(opts.ckpt_out, &cfg, &trainer.state)?;
    Ok(TrainSummary {
        steps_run: steps,
        final_step: trainer.state.step,
        last: rows.last().map(|r| r.loss),
        trace_path,
    })
}

fn warn_conflicts(stored: &IleConfig, kv: &KvConfig) {
    let keys = conflicting_keys(stored, kv);
    if !keys.is_empty() {
        log::warn!("checkpoint config overrides file values for: {}", keys.join(", "));
    }
}

/// Loads a checkpoint, reconciling it with an optional config file.
fn load_model(ckpt: &Path, config: Option<&Path>) -> Result<(IleConfig, TrainState)> {
    let (cfg, state) = load_state(ckpt)?;
    if let Some(p) = config {
        warn_conflicts(&cfg, &KvConfig::load(p)?);
    }
    Ok((cfg, state))
}

fn check_window(seqs: &[Sequence], k: usize, m: usize) -> Result<()> {
    if k == 0 || m == 0 {
        return Err(IleError::Config("need k >= 1 and horizon >= 1".into()));
    }
    if let Some(s) = seqs.iter().find(|s| s.len() < k + m) {
        return Err(IleError::Config(format!(
            "k + horizon = {} exceeds sequence length {}",
            k + m,
            s.len()
        )));
    }
    Ok(())
}

pub struct PredictOptions<'a> {
    pub ckpt: &'a Path,
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    /// Defaults to `cond.len`.
    pub k: Option<usize>,
    pub horizon: usize,
    pub out: &'a Path,
}

/// Writes `seq{i}_t{t}_{pred|true}.pgm` for every sequence and predicted
/// step; returns the number of files written.
pub fn predict(opts: &PredictOptions) -> Result<usize> {
    let (cfg, state) = load_model(opts.ckpt, opts.config)?;
    let seqs = load_frames(opts.data, &cfg)?;
    let k = opts.k.unwrap_or(cfg.cond_len);
    check_window(&seqs, k, opts.horizon)?;
    fs::create_dir_all(opts.out)?;
    let mut written = 0;
    for (i, seq) in seqs.iter().enumerate() {
        let pred = predict_frames(&state.model, &seq.window(0..k)?, opts.horizon, &cfg)?;
        for h in 0..opts.horizon {
            let t = k + h;
            let (hh, ww) = (seq.height, seq.width);
            write_pgm(opts.out.join(format!("seq{i}_t{t}_pred.pgm")), hh, ww, pred.row(h))?;
            write_pgm(opts.out.join(format!("seq{i}_t{t}_true.pgm")), hh, ww, seq.frame(t))?;
            written += 2;
        }
    }
    Ok(written)
}

pub struct EvalOptions<'a> {
    pub ckpt: &'a Path,
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub k: Option<usize>,
    pub horizon: usize,
    pub report: &'a Path,
}

pub fn eval(opts: &EvalOptions) -> Result<EvalReport> {
    let (cfg, state) = load_model(opts.ckpt, opts.config)?;
    let seqs = load_frames(opts.data, &cfg)?;
    let k = opts.k.unwrap_or(cfg.cond_len);
    check_window(&seqs, k, opts.horizon)?;
    let report = evaluate(&state.model, &seqs, k, opts.horizon, &cfg)?;
    report.write_csv(opts.report)?;
    Ok(report)
}
