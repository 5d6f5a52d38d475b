//! Bouncing-sprite sequences and their binary container.
//!
//! A solid `s × s` sprite moves with an integer velocity and reflects
//! elastically off the grid boundary. Frames are binary plus optional
//! uniform dequantization jitter.
//!
//! Container layout, little-endian: `"ILSQ"`, version `u32 = 1`, count,
//! T, H, W (all `u32`), then `count·T·H·W` `f64` values, sequence-major,
//! frame-major, row-major.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IleError, Result};
use crate::tensor::Tensor;

pub const SEQ_MAGIC: &[u8; 4] = b"ILSQ";
pub const SEQ_VERSION: u32 = 1;
pub const SEQ_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteConfig {
    pub height: usize,
    pub width: usize,
    pub sprite: usize,
    pub max_speed: usize,
    pub seq_len: usize,
    pub jitter: f64,
    pub count: usize,
    pub seed: u64,
}

impl SpriteConfig {
    pub fn new(height: usize, width: usize, sprite: usize, seq_len: usize) -> Self {
        SpriteConfig {
            height,
            width,
            sprite,
            max_speed: 3,
            seq_len,
            jitter: 1.0 / 64.0,
            count: 100,
            seed: 0,
        }
    }

    /// Largest top-left coordinate per axis, `[rows, cols]`.
    pub fn limits(&self) -> [i64; 2] {
        [
            self.height as i64 - self.sprite as i64,
            self.width as i64 - self.sprite as i64,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IleError::Config(m));
        let min_side = self.height.min(self.width);
        if self.sprite == 0 || self.sprite >= min_side {
            return bad(format!("sprite.size must be in 1..{min_side}, got {}", self.sprite));
        }
        if self.max_speed < 1 {
            return bad("speed.max must be >= 1".into());
        }
        // one reflection per axis per step
        if self.max_speed > min_side - self.sprite {
            return bad(format!(
                "speed.max {} exceeds the travel span {}",
                self.max_speed,
                min_side - self.sprite
            ));
        }
        if !(0.0..0.25).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 0.25), got {}", self.jitter));
        }
        if self.seq_len == 0 {
            return bad("seq.len must be positive".into());
        }
        Ok(())
    }
}

/// Sprite position (top-left, `[row, col]`) and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sprite {
    pub pos: [i64; 2],
    pub vel: [i64; 2],
}

impl Sprite {
    /// Advances one frame; returns whether any axis reflected.
    pub fn step(&mut self, limits: [i64; 2]) -> bool {
        let mut bounced = false;
        for axis in 0..2 {
            let mut p = self.pos[axis] + self.vel[axis];
            if p > limits[axis] {
                p = 2 * limits[axis] - p;
                self.vel[axis] = -self.vel[axis];
                bounced = true;
            } else if p < 0 {
                p = -p;
                self.vel[axis] = -self.vel[axis];
                bounced = true;
            }
            self.pos[axis] = p;
        }
        bounced
    }
}

/// Per-frame sprite states; `bounced[t]` marks a reflection on the step
/// that produced frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteTrack {
    pub states: Vec<Sprite>,
    pub bounced: Vec<bool>,
}

impl SpriteTrack {
    /// Whether any frame in `frames` was produced by a reflected step.
    pub fn bounces_in(&self, frames: std::ops::Range<usize>) -> bool {
        frames.into_iter().any(|t| self.bounced.get(t).copied().unwrap_or(false))
    }
}

/// `T` frames on an `H × W` grid, stored as a `[T, H·W]` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub height: usize,
    pub width: usize,
    pub frames: Tensor,
}

impl Sequence {
    pub fn new(height: usize, width: usize, frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 || frames.cols() != height * width {
            return Err(IleError::Shape(format!(
                "frames {:?} for a {height}x{width} grid",
                frames.shape()
            )));
        }
        if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(IleError::Config("frame intensities must lie in [0, 1]".into()));
        }
        Ok(Sequence { height, width, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    /// Frames `range` as their own `[len, D]` matrix.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<Tensor> {
        let d = self.height * self.width;
        if range.end > self.len() || range.start > range.end {
            return Err(IleError::Config(format!(
                "frames {range:?} out of a {}-frame sequence",
                self.len()
            )));
        }
        Tensor::matrix(range.len(), d, self.frames.data()[range.start * d..range.end * d].to_vec())
    }
}

/// Renders a trajectory from an explicit starting state.
pub fn render_track<R: Rng>(cfg: &SpriteConfig, start: Sprite, rng: &mut R) -> Result<(Sequence, SpriteTrack)> {
    cfg.validate()?;
    let limits = cfg.limits();
    if (0..2).any(|a| start.pos[a] < 0 || start.pos[a] > limits[a]) {
        return Err(IleError::Config(format!("sprite start {:?} outside the grid", start.pos)));
    }
    let (h, w, s) = (cfg.height, cfg.width, cfg.sprite);
    let mut sprite = start;
    let mut states = Vec::with_capacity(cfg.seq_len);
    let mut bounced = Vec::with_capacity(cfg.seq_len);
    let mut data = vec![0.0; cfg.seq_len * h * w];
    for t in 0..cfg.seq_len {
        let b = if t > 0 { sprite.step(limits) } else { false };
        states.push(sprite);
        bounced.push(b);
        let frame = &mut data[t * h * w..(t + 1) * h * w];
        let (r0, c0) = (sprite.pos[0] as usize, sprite.pos[1] as usize);
        for r in r0..r0 + s {
            for c in c0..c0 + s {
                frame[r * w + c] = 1.0;
            }
        }
        if cfg.jitter > 0.0 {
            for v in frame.iter_mut() {
                *v = (*v + rng.random_range(0.0..cfg.jitter)).clamp(0.0, 1.0);
            }
        }
    }
    let seq = Sequence::new(h, w, Tensor::matrix(cfg.seq_len, h * w, data)?)?;
    Ok((seq, SpriteTrack { states, bounced }))
}

/// Sequence `index` of the dataset described by `cfg`, with its track.
/// Fully determined by `(cfg.seed, index)`.
pub fn generate_with_track(cfg: &SpriteConfig, index: u64) -> Result<(Sequence, SpriteTrack)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let limits = cfg.limits();
    let pos = [rng.random_range(0..=limits[0]), rng.random_range(0..=limits[1])];
    let vmax = cfg.max_speed as i64;
    let vel = loop {
        let v = [rng.random_range(-vmax..=vmax), rng.random_range(-vmax..=vmax)];
        if v != [0, 0] {
            break v;
        }
    };
    render_track(cfg, Sprite { pos, vel }, &mut rng)
}

pub fn generate_sequence(cfg: &SpriteConfig, index: u64) -> Result<Sequence> {
    Ok(generate_with_track(cfg, index)?.0)
}

/// `cfg.count` sequences, in index order.
pub fn generate_dataset(cfg: &SpriteConfig) -> Result<Vec<Sequence>> {
    (0..cfg.count as u64).map(|i| generate_sequence(cfg, i)).collect()
}

/// Shared dimensions of a stored dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqDims {
    pub len: usize,
    pub height: usize,
    pub width: usize,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| IleError::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_sequences(seqs: &[Sequence]) -> Result<Vec<u8>> {
    let dims = match seqs.first() {
        Some(s) => SeqDims {
            len: s.len(),
            height: s.height,
            width: s.width,
        },
        None => SeqDims {
            len: 0,
            height: 0,
            width: 0,
        },
    };
    if seqs
        .iter()
        .any(|s| s.len() != dims.len || s.height != dims.height || s.width != dims.width)
    {
        return Err(IleError::Config("sequences must share T, H and W".into()));
    }
    let payload = seqs.len() * dims.len * dims.height * dims.width;
    let mut out = Vec::with_capacity(SEQ_HEADER_LEN + 8 * payload);
    out.extend_from_slice(SEQ_MAGIC);
    for v in [
        SEQ_VERSION,
        to_u32(seqs.len(), "count")?,
        to_u32(dims.len, "T")?,
        to_u32(dims.height, "H")?,
        to_u32(dims.width, "W")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in seqs {
        for v in s.frames.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_sequences(bytes: &[u8]) -> Result<(SeqDims, Vec<Sequence>)> {
    if bytes.len() < SEQ_HEADER_LEN {
        return Err(IleError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != SEQ_MAGIC {
        return Err(IleError::Format("bad magic, expected ILSQ".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let version = word(0) as u32;
    if version != SEQ_VERSION {
        return Err(IleError::Format(format!("unsupported version {version}")));
    }
    let (count, len, height, width) = (word(1), word(2), word(3), word(4));
    let per_seq = len
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| IleError::Format("dimensions overflow".into()))?;
    let expected = count
        .checked_mul(per_seq)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(SEQ_HEADER_LEN))
        .ok_or_else(|| IleError::Format("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(IleError::Format(format!(
            "expected {expected} bytes for {count} sequences, found {}",
            bytes.len()
        )));
    }
    let mut seqs = Vec::with_capacity(count);
    for (i, chunk) in bytes[SEQ_HEADER_LEN..].chunks_exact((per_seq * 8).max(1)).take(count).enumerate() {
        let data: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let frames = Tensor::matrix(len, height * width, data)
            .map_err(|e| IleError::Format(format!("sequence {i}: {e}")))?;
        let seq = Sequence::new(height, width, frames)
            .map_err(|e| IleError::Format(format!("sequence {i}: {e}")))?;
        seqs.push(seq);
    }
    if seqs.len() != count {
        return Err(IleError::Format("empty frames with non-zero count".into()));
    }
    Ok((SeqDims { len, height, width }, seqs))
}

pub fn write_sequences(path: impl AsRef<Path>, seqs: &[Sequence]) -> Result<()> {
    fs::write(path, encode_sequences(seqs)?)?;
    Ok(())
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<(SeqDims, Vec<Sequence>)> {
    decode_sequences(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(h: usize, w: usize, s: usize, t: usize) -> SpriteConfig {
        SpriteConfig {
            jitter: 0.0,
            max_speed: 2,
            ..SpriteConfig::new(h, w, s, t)
        }
    }

    #[test]
    fn reflection_rule() {
        let mut sp = Sprite { pos: [0, 5], vel: [0, 2] };
        assert!(sp.step([6, 6]));
        assert_eq!(sp, Sprite { pos: [0, 5], vel: [0, -2] });
        let mut sp = Sprite { pos: [1, 3], vel: [-2, 1] };
        assert!(sp.step([6, 6]));
        assert_eq!(sp, Sprite { pos: [1, 4], vel: [2, 1] });
    }

    #[test]
    fn stationary_sprite_gives_identical_frames() {
        let cfg = quiet(8, 8, 2, 6);
        let (seq, _) = render_track(&cfg, Sprite { pos: [3, 2], vel: [0, 0] }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in 1..6 {
            assert_eq!(seq.frame(t), seq.frame(0));
        }
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = SpriteConfig { seed: 7, ..SpriteConfig::new(8, 8, 2, 10) };
        let cfg = SpriteConfig { max_speed: 2, ..cfg };
        assert_eq!(generate_sequence(&cfg, 4).unwrap(), generate_sequence(&cfg, 4).unwrap());
        assert_ne!(generate_sequence(&cfg, 4).unwrap(), generate_sequence(&cfg, 5).unwrap());
    }

    #[test]
    fn mass_speed_and_bounds_preserved() {
        let cfg = SpriteConfig { count: 40, seed: 3, ..quiet(8, 10, 3, 20) };
        for i in 0..cfg.count as u64 {
            let (seq, track) = generate_with_track(&cfg, i).unwrap();
            let speed = track.states[0].vel.map(i64::abs);
            for t in 0..seq.len() {
                let ones = seq.frame(t).iter().filter(|&&v| v == 1.0).count();
                assert_eq!(ones, 9);
                assert_eq!(seq.frame(t).iter().filter(|&&v| v != 0.0).count(), 9);
                assert_eq!(track.states[t].vel.map(i64::abs), speed);
            }
        }
    }

    #[test]
    fn jitter_stays_in_range() {
        let cfg = SpriteConfig { jitter: 0.2, max_speed: 2, ..SpriteConfig::new(6, 6, 2, 5) };
        let seq = generate_sequence(&cfg, 0).unwrap();
        assert!(seq.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(seq.frames.data().iter().any(|&v| v > 0.0 && v < 0.2));
    }

    #[test]
    fn invalid_configs() {
        assert!(quiet(8, 8, 8, 5).validate().is_err());
        assert!(SpriteConfig { max_speed: 0, ..quiet(8, 8, 2, 5) }.validate().is_err());
        assert!(SpriteConfig { max_speed: 7, ..quiet(8, 8, 2, 5) }.validate().is_err());
        assert!(SpriteConfig { jitter: 0.25, ..quiet(8, 8, 2, 5) }.validate().is_err());
    }

    #[test]
    fn container_rejects_corruption() {
        let cfg = SpriteConfig { count: 3, ..quiet(4, 5, 1, 3) };
        let bytes = encode_sequences(&generate_dataset(&cfg).unwrap()).unwrap();
        assert_eq!(bytes.len(), 24 + 3 * 3 * 20 * 8);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_sequences(&bad), Err(IleError::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_sequences(&bad), Err(IleError::Format(_))));
        assert!(matches!(decode_sequences(&bytes[..bytes.len() - 1]), Err(IleError::Format(_))));
        assert!(matches!(decode_sequences(&bytes[..10]), Err(IleError::Format(_))));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let bytes = encode_sequences(&[]).unwrap();
        assert_eq!(bytes.len(), SEQ_HEADER_LEN);
        let (_, seqs) = decode_sequences(&bytes).unwrap();
        assert!(seqs.is_empty());
    }
}
