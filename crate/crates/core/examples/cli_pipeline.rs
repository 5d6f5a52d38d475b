//! Runs generate, train (in two resumed halves), predict and eval from a
//! config file, the same path the `ile` binary takes.
//!
//! ```text
//! cargo run --release --example cli_pipeline -- --config configs/bouncing.conf --steps 400
//! ```

use std::fs;
use std::path::PathBuf;

use clap::Parser;
use ile::commands::{eval, generate, predict, train, EvalOptions, PredictOptions, TrainOptions};
use ile::config::Split;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "configs/bouncing.conf")]
    config: PathBuf,
    #[arg(long, default_value = "pipeline")]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    steps: usize,
}

fn main() -> ile::Result<()> {
    let args = Args::parse();
    fs::create_dir_all(&args.out)?;
    let path = |name: &str| args.out.join(name);

    let dims = generate(&args.config, Split::Train, &path("train.ilsq"))?;
    generate(&args.config, Split::Test, &path("test.ilsq"))?;
    println!("generated sequences of {} frames at {}x{}", dims.len, dims.height, dims.width);

    let half = args.steps / 2;
    let first = train(&TrainOptions {
        config: &args.config,
        data: &path("train.ilsq"),
        ckpt_out: &path("half.ilec"),
        resume: None,
        steps: Some(half),
        trace: None,
    })?;
    let second = train(&TrainOptions {
        config: &args.config,
        data: &path("train.ilsq"),
        ckpt_out: &path("model.ilec"),
        resume: Some(&path("half.ilec")),
        steps: Some(args.steps - half),
        trace: None,
    })?;
    for s in [&first, &second] {
        if let Some(last) = &s.last {
            println!("step {:>5}  loss {:.4e}  trace {}", s.final_step, last.total, s.trace_path.display());
        }
    }

    let frames = predict(&PredictOptions {
        ckpt: &path("model.ilec"),
        config: None,
        data: &path("test.ilsq"),
        k: None,
        horizon: 5,
        out: &path("frames"),
    })?;
    println!("wrote {frames} PGM files");

    let report = eval(&EvalOptions {
        ckpt: &path("model.ilec"),
        config: None,
        data: &path("test.ilsq"),
        k: None,
        horizon: 5,
        report: &path("report.csv"),
    })?;
    println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "h", "psnr", "last-in", "ssim", "last-in");
    for r in &report.rows {
        println!(
            "{:>3} {:>10.2} {:>10.2} {:>10.3} {:>10.3}",
            r.horizon, r.model_psnr, r.baseline_psnr, r.model_ssim, r.baseline_ssim
        );
    }
    Ok(())
}
