use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ile::commands::{self, EvalOptions, PredictOptions, TrainOptions};
use ile::config::Split;

#[derive(Parser)]
#[command(name = "ile", version, about = "Invertible linear embeddings for video extrapolation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a bouncing-sprite dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which count/seed pair of the config to use.
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train from scratch, or resume with --ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Loss trace CSV, default `<ckpt-out>.trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Export predicted and true frames as PGM files.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the last-frame baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        report: PathBuf,
    },
}

fn run(cli: Cli) -> ile::Result<()> {
    match cli.cmd {
        Command::Generate { config, out, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let dims = commands::generate(&config, split, &out)?;
            let (_, seqs) = ile::data::read_sequences(&out)?;
            println!(
                "wrote {} sequences of {} frames at {}x{} to {}",
                seqs.len(),
                dims.len,
                dims.height,
                dims.width,
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            ckpt_out,
            ckpt,
            steps,
            trace,
        } => {
            let summary = commands::train(&TrainOptions {
                config: &config,
                data: &data,
                ckpt_out: &ckpt_out,
                resume: ckpt.as_deref(),
                steps,
                trace: trace.as_deref(),
            })?;
            println!(
                "ran {} steps (now at step {}), checkpoint {}, trace {}",
                summary.steps_run,
                summary.final_step,
                ckpt_out.display(),
                summary.trace_path.display()
            );
            if let Some(l) = summary.last {
                println!(
                    "predictive {:.6e}  logdet {:.6e}  scale {:.6e}  total {:.6e}  gamma {:.6e}",
                    l.predictive, l.logdet_term, l.scale_term, l.total, l.gamma
                );
            }
        }
        Command::Predict {
            ckpt,
            data,
            config,
            k,
            horizon,
            out,
        } => {
            let n = commands::predict(&PredictOptions {
                ckpt: &ckpt,
                config: config.as_deref(),
                data: &data,
                k,
                horizon,
                out: &out,
            })?;
            println!("wrote {n} frames to {}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            config,
            k,
            horizon,
            report,
        } => {
            let rep = commands::eval(&EvalOptions {
                ckpt: &ckpt,
                config: config.as_deref(),
                data: &data,
                k,
                horizon,
                report: &report,
            })?;
            println!("{} sequences", rep.sequences);
            println!("{}", ile::metrics::REPORT_HEADER);
            let first = &rep.rows[0];
            let last = &rep.rows[rep.rows.len() - 1];
            for r in [first, last] {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4}",
                    r.horizon, r.model_psnr, r.model_ssim, r.baseline_psnr, r.baseline_ssim
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
