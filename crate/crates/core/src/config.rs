//! `key = value` configuration files.
//!
//! One flat namespace, `#` starts a comment. Recognized keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `grid.h`, `grid.w` | frame size | required |
//! | `seq.len` | frames per sequence | required |
//! | `sprite.size` | sprite side | required by `generate` |
//! | `speed.max` | max pixels/frame per axis | 3 |
//! | `jitter` | dequantization amplitude | 1/64 |
//! | `data.count`, `data.seed` | training set size and seed | 500, 1 |
//! | `test.count`, `test.seed` | held-out set size and seed | 100, 2 |
//! | `cond.len` | conditioning frames `k` | 4 |
//! | `flow.depth`, `flow.hidden` | coupling layers, subnet width | 8, 64 |
//! | `state.dim` | latent state size `n` | 2·H·W |
//! | `ridge.lambda` | initial-state ridge | 1e-8 |
//! | `gamma.floor`, `gamma.exponent` | scale floor and `c` | 1e-12, 1 |
//! | `gamma.detach` | hold `γ` out of the gradient | true |
//! | `opt.lr`, `opt.beta1`, `opt.beta2` | optimizer | 1e-3, 0.9, 0.999 |
//! | `batch`, `steps`, `seed` | training loop | 8, 1000, 0 |
//! | `jnf.epsilon` | stability margin | 1e-14 |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::SpriteConfig;
use crate::error::{IleError, Result};
use crate::model::IleConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "grid.h",
    "grid.w",
    "sprite.size",
    "speed.max",
    "seq.len",
    "cond.len",
    "flow.depth",
    "flow.hidden",
    "state.dim",
    "ridge.lambda",
    "gamma.floor",
    "gamma.exponent",
    "gamma.detach",
    "opt.lr",
    "opt.beta1",
    "opt.beta2",
    "batch",
    "steps",
    "seed",
    "jitter",
    "data.count",
    "data.seed",
    "test.count",
    "test.seed",
    "jnf.epsilon",
];

/// Parsed key/value pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

/// Which generated dataset a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IleError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(IleError::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(IleError::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        KvConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| IleError::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| IleError::MissingKey(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

pub fn ile_config(kv: &KvConfig) -> Result<IleConfig> {
    let h = kv.require("grid.h")?;
    let w = kv.require("grid.w")?;
    let t = kv.require("seq.len")?;
    let d = IleConfig::new(h, w, t);
    let cfg = IleConfig {
        flow_depth: kv.get_or("flow.depth", d.flow_depth)?,
        flow_hidden: kv.get_or("flow.hidden", d.flow_hidden)?,
        state_dim: kv.get_or("state.dim", d.state_dim)?,
        cond_len: kv.get_or("cond.len", d.cond_len)?,
        ridge_lambda: kv.get_or("ridge.lambda", d.ridge_lambda)?,
        gamma_floor: kv.get_or("gamma.floor", d.gamma_floor)?,
        gamma_exponent: kv.get_or("gamma.exponent", d.gamma_exponent)?,
        gamma_detach: kv.get_or("gamma.detach", d.gamma_detach)?,
        lr: kv.get_or("opt.lr", d.lr)?,
        beta1: kv.get_or("opt.beta1", d.beta1)?,
        beta2: kv.get_or("opt.beta2", d.beta2)?,
        batch: kv.get_or("batch", d.batch)?,
        steps: kv.get_or("steps", d.steps)?,
        seed: kv.get_or("seed", d.seed)?,
        epsilon: kv.get_or("jnf.epsilon", d.epsilon)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Text form embedded in checkpoints; parses back to an identical config.
pub fn ile_config_text(cfg: &IleConfig) -> String {
    let mut s = String::new();
    let pairs: [(&str, String); 18] = [
        ("grid.h", cfg.height.to_string()),
        ("grid.w", cfg.width.to_string()),
        ("seq.len", cfg.seq_len.to_string()),
        ("cond.len", cfg.cond_len.to_string()),
        ("flow.depth", cfg.flow_depth.to_string()),
        ("flow.hidden", cfg.flow_hidden.to_string()),
        ("state.dim", cfg.state_dim.to_string()),
        ("ridge.lambda", cfg.ridge_lambda.to_string()),
        ("gamma.floor", cfg.gamma_floor.to_string()),
        ("gamma.exponent", cfg.gamma_exponent.to_string()),
        ("gamma.detach", cfg.gamma_detach.to_string()),
        ("opt.lr", cfg.lr.to_string()),
        ("opt.beta1", cfg.beta1.to_string()),
        ("opt.beta2", cfg.beta2.to_string()),
        ("batch", cfg.batch.to_string()),
        ("steps", cfg.steps.to_string()),
        ("seed", cfg.seed.to_string()),
        ("jnf.epsilon", cfg.epsilon.to_string()),
    ];
    for (k, v) in pairs {
        writeln!(s, "{k} = {v}").unwrap();
    }
    s
}

const MODEL_KEYS: &[&str] = &[
    "grid.h",
    "grid.w",
    "seq.len",
    "cond.len",
    "flow.depth",
    "flow.hidden",
    "state.dim",
    "ridge.lambda",
    "gamma.floor",
    "gamma.exponent",
    "gamma.detach",
    "opt.lr",
    "opt.beta1",
    "opt.beta2",
    "batch",
    "steps",
    "seed",
    "jnf.epsilon",
];

/// Keys in `file` whose values disagree with the config stored in a
/// checkpoint.
pub fn conflicting_keys(stored: &IleConfig, file: &KvConfig) -> Vec<String> {
    let stored_kv = KvConfig::parse(&ile_config_text(stored)).expect("generated config parses");
    MODEL_KEYS
        .iter()
        .filter(|k| match (file.raw(k), stored_kv.raw(k)) {
            (Some(a), Some(b)) => match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => x != y,
                _ => a != b,
            },
            _ => false,
        })
        .map(|k| k.to_string())
        .collect()
}

pub fn sprite_config(kv: &KvConfig, split: Split) -> Result<SpriteConfig> {
    let h = kv.require("grid.h")?;
    let w = kv.require("grid.w")?;
    let s = kv.require("sprite.size")?;
    let t = kv.require("seq.len")?;
    let base = SpriteConfig::new(h, w, s, t);
    let data_seed: u64 = kv.get_or("data.seed", 1)?;
    let test_seed: u64 = kv.get_or("test.seed", 2)?;
    if data_seed == test_seed {
        return Err(IleError::Config(format!(
            "data.seed and test.seed must differ (both {data_seed})"
        )));
    }
    let (count, seed) = match split {
        Split::Train => (kv.get_or("data.count", 500)?, data_seed),
        Split::Test => (kv.get_or("test.count", 100)?, test_seed),
    };
    let cfg = SpriteConfig {
        max_speed: kv.get_or("speed.max", base.max_speed)?,
        jitter: kv.get_or("jitter", base.jitter)?,
        count,
        seed,
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KvConfig::parse("# top\n grid.h = 8 # inline\n\ngrid.w=8\nseq.len = 12\n").unwrap();
        assert_eq!(kv.require::<usize>("grid.h").unwrap(), 8);
        let cfg = ile_config(&kv).unwrap();
        assert_eq!(cfg.state_dim, 128);
    }

    #[test]
    fn errors_name_the_key() {
        let kv = KvConfig::parse("grid.h = 8\nseq.len = 4").unwrap();
        let err = ile_config(&kv).unwrap_err();
        assert!(matches!(&err, IleError::MissingKey(k) if k == "grid.w"));
        assert!(err.to_string().contains("grid.w"));
        assert!(KvConfig::parse("grid.x = 1").is_err());
        assert!(KvConfig::parse("grid.h = 1\ngrid.h = 2").is_err());
        assert!(KvConfig::parse("grid.h 1").is_err());
        let kv = KvConfig::parse("grid.h = eight").unwrap();
        assert!(kv.get::<usize>("grid.h").is_err());
    }

    #[test]
    fn config_text_roundtrips_exactly() {
        let mut cfg = IleConfig::new(5, 3, 9);
        cfg.ridge_lambda = 1.2345678901234567e-9;
        cfg.lr = 0.1 + 0.2;
        cfg.seed = u64::MAX;
        let back = ile_config(&KvConfig::parse(&ile_config_text(&cfg)).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(conflicting_keys(&cfg, &KvConfig::parse(&ile_config_text(&cfg)).unwrap()).is_empty());
        let other = KvConfig::parse("grid.h = 5\nopt.lr = 0.5\n").unwrap();
        assert_eq!(conflicting_keys(&cfg, &other), vec!["opt.lr".to_string()]);
    }

    #[test]
    fn splits_use_distinct_seeds() {
        let kv = KvConfig::parse("grid.h=8\ngrid.w=8\nsprite.size=2\nseq.len=12\nspeed.max=2").unwrap();
        let tr = sprite_config(&kv, Split::Train).unwrap();
        let te = sprite_config(&kv, Split::Test).unwrap();
        assert_ne!(tr.seed, te.seed);
        assert_eq!((tr.count, te.count), (500, 100));
        let same = KvConfig::parse("grid.h=8\ngrid.w=8\nsprite.size=2\nseq.len=12\ndata.seed=3\ntest.seed=3").unwrap();
        assert!(sprite_config(&same, Split::Test).is_err());
    }
}
