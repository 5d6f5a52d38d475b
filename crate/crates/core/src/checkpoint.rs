//! Versioned binary container for a training state.
//!
//! Layout, little-endian: `"ILEC"`, version `u32 = 1`, config text (u32
//! byte length, then UTF-8 `key = value` lines), array count `u32`, then
//! per array: name length `u32`, name bytes, rank `u32`, one `u32` per
//! dimension, `f64` payload.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::config::{ile_config, ile_config_text, KvConfig};
use crate::error::{IleError, Result};
use crate::model::IleConfig;
use crate::tensor::Tensor;
use crate::train::{Adam, TrainState};

pub const CKPT_MAGIC: &[u8; 4] = b"ILEC";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        NamedArray {
            name: name.into(),
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    fn scalar(name: &str, v: f64) -> Self {
        NamedArray {
            name: name.into(),
            dims: vec![],
            data: vec![v],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: IleConfig,
    pub arrays: Vec<NamedArray>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IleError::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| IleError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn from_state(cfg: &IleConfig, state: &TrainState) -> Self {
        let mut arrays = Vec::new();
        let named = state.model.named_params();
        for (name, t) in &named {
            arrays.push(NamedArray::from_tensor(name.clone(), t));
        }
        for (i, layer) in state.model.flow.layers.iter().enumerate() {
            arrays.push(NamedArray {
                name: format!("flow.{i}.perm"),
                dims: vec![layer.perm.len()],
                data: layer.perm.iter().map(|&p| p as f64).collect(),
            });
        }
        for ((name, _), (m, v)) in named.iter().zip(state.opt.m.iter().zip(&state.opt.v)) {
            arrays.push(NamedArray::from_tensor(format!("opt.m.{name}"), m));
            arrays.push(NamedArray::from_tensor(format!("opt.v.{name}"), v));
        }
        arrays.push(NamedArray::scalar("opt.t", state.opt.t as f64));
        arrays.push(NamedArray::scalar("train.step", state.step as f64));
        Checkpoint {
            version: CKPT_VERSION,
            config: cfg.clone(),
            arrays,
        }
    }

    /// Rebuilds the training state; every expected array must be present
    /// with the shape the config implies.
    pub fn to_state(&self) -> Result<TrainState> {
        let mut state = TrainState::init(&self.config)?;
        let by_name: HashMap<&str, &NamedArray> = self.arrays.iter().map(|a| (a.name.as_str(), a)).collect();
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let a = by_name
                .get(name)
                .ok_or_else(|| IleError::Format(format!("checkpoint lacks array `{name}`")))?;
            if a.dims != shape {
                return Err(IleError::Format(format!(
                    "array `{name}` has dims {:?}, expected {shape:?}",
                    a.dims
                )));
            }
            Tensor::new(a.dims.clone(), a.data.clone())
                .map_err(|e| IleError::Format(format!("array `{name}`: {e}")))
        };
        let names: Vec<(String, Vec<usize>)> = state
            .model
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        for ((name, shape), p) in names.iter().zip(state.model.params_mut()) {
            *p = fetch(name, shape)?;
        }
        let dim = self.config.dim();
        for (i, layer) in state.model.flow.layers.iter_mut().enumerate() {
            let perm = fetch(&format!("flow.{i}.perm"), &[dim])?;
            let perm: Vec<usize> = perm.data().iter().map(|&v| v as usize).collect();
            let mut seen = vec![false; dim];
            if perm.iter().any(|&p| p >= dim || std::mem::replace(&mut seen[p], true)) {
                return Err(IleError::Format(format!("flow.{i}.perm is not a permutation")));
            }
            layer.perm = perm;
        }
        let mut opt = Adam::new(&self.config, &state.model);
        for (i, (name, shape)) in names.iter().enumerate() {
            opt.m[i] = fetch(&format!("opt.m.{name}"), shape)?;
            opt.v[i] = fetch(&format!("opt.v.{name}"), shape)?;
        }
        opt.t = fetch("opt.t", &[])?.item() as u64;
        state.opt = opt;
        state.step = fetch("train.step", &[])?.item() as u64;
        Ok(state)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        put_u32(&mut out, self.version as usize)?;
        let text = ile_config_text(&self.config);
        put_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        put_u32(&mut out, self.arrays.len())?;
        for a in &self.arrays {
            put_u32(&mut out, a.name.len())?;
            out.extend_from_slice(a.name.as_bytes());
            put_u32(&mut out, a.dims.len())?;
            for &d in &a.dims {
                put_u32(&mut out, d)?;
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CKPT_MAGIC {
            return Err(IleError::Format("bad magic, expected ILEC".into()));
        }
        let version = r.u32()? as u32;
        if version != CKPT_VERSION {
            return Err(IleError::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()?;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| IleError::Format("config block is not UTF-8".into()))?;
        let config = ile_config(&KvConfig::parse(text)?)?;
        let count = r.u32()?;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()?;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| IleError::Format("array name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| IleError::Format(format!("array `{name}` too large")))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| IleError::Format("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            arrays.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(IleError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            version,
            config,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::decode(&fs::read(path)?)
    }
}

pub fn save_state(path: impl AsRef<Path>, cfg: &IleConfig, state: &TrainState) -> Result<()> {
    Checkpoint::from_state(cfg, state).save(path)
}

pub fn load_state(path: impl AsRef<Path>) -> Result<(IleConfig, TrainState)> {
    let ck = Checkpoint::load(path)?;
    let state = ck.to_state()?;
    Ok((ck.config, state))
}
