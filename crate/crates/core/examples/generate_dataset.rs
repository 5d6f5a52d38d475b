//! Renders a bouncing-sprite dataset, writes it to disk, reads it back and
//! dumps the first sequence as PGM frames.
//!
//! ```text
//! cargo run --release --example generate_dataset -- --out /tmp/sprites
//! ```

use std::fs;
use std::path::PathBuf;

use clap::Parser;
use ile::data::{generate_with_track, read_sequences, write_sequences};
use ile::pgm::write_pgm;
use ile::SpriteConfig;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "sprites")]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ile::Result<()> {
    let args = Args::parse();
    let cfg = SpriteConfig {
        max_speed: 2,
        count: args.count,
        seed: args.seed,
        ..SpriteConfig::new(8, 8, 2, 12)
    };
    fs::create_dir_all(&args.out)?;

    let mut seqs = Vec::with_capacity(cfg.count);
    let mut bouncing = 0;
    for i in 0..cfg.count as u64 {
        let (seq, track) = generate_with_track(&cfg, i)?;
        bouncing += track.bounces_in(0..cfg.seq_len) as usize;
        seqs.push(seq);
    }
    let path = args.out.join("train.ilsq");
    write_sequences(&path, &seqs)?;
    let (dims, back) = read_sequences(&path)?;
    assert_eq!(back, seqs);
    println!(
        "{} sequences of {}x{}x{} ({} bounce off a wall) -> {}",
        back.len(),
        dims.len,
        dims.height,
        dims.width,
        bouncing,
        path.display()
    );

    let first = &seqs[0];
    for t in 0..first.len() {
        write_pgm(args.out.join(format!("seq0_t{t:02}.pgm")), first.height, first.width, first.frame(t))?;
    }
    let mass: f64 = first.frame(0).iter().sum();
    println!("frame 0 of sequence 0 has total intensity {mass:.2}");
    Ok(())
}
