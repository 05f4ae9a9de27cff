//! Versioned binary checkpoint.
//!
//! Layout (little-endian): magic `MVCNCKPT`, `u32` version, 32-byte SHA-256
//! of the canonical config text, `u32` length + config text, `u64` train
//! step, `u64` epoch, `u64` generator and discriminator Adam steps, `u32`
//! tensor count, then per tensor `u32` name length, name, `u32` rank,
//! `u64` dims and `f64` data.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::{Adam, Module, Moments};
use super::config::TrainConfig;
use super::tensor::Tensor;
use super::train::TrainState;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MVCNCKPT";
pub const VERSION: u32 = 1;

pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn collect_tensors(state: &mut TrainState) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    {
        let mut put = |name: &str, t: &Tensor| {
            out.insert(name.to_string(), t.clone());
        };
        state.generator.visit_params(&mut |n, p| put(n, &p.value));
        state.generator.visit_buffers(&mut |n, t| put(n, t));
        state.discriminator.visit_params(&mut |n, p| put(n, &p.value));
        state.discriminator.visit_buffers(&mut |n, t| put(n, t));
    }
    for (prefix, adam) in [("adam_g", &state.adam_g), ("adam_d", &state.adam_d)] {
        for (name, m) in &adam.moments {
            out.insert(format!("{prefix}.m.{name}"), m.m.clone());
            out.insert(format!("{prefix}.v.{name}"), m.v.clone());
        }
    }
    out
}

pub fn encode(state: &mut TrainState) -> Vec<u8> {
    let text = state.config.to_string();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&config_hash(&text));
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    for v in [state.step, state.epoch, state.adam_g.step, state.adam_d.step] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tensors = collect_tensors(state);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let text = r.string()?;
    if config_hash(&text) != hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let config = TrainConfig::parse(&text, "checkpoint config")?;
    let mut state = TrainState::new(&config)?;
    state.step = r.u64()?;
    state.epoch = r.u64()?;
    state.adam_g.step = r.u64()?;
    state.adam_d.step = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(name, Tensor { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    restore(&mut state, tensors)?;
    Ok(state)
}

fn restore(state: &mut TrainState, mut tensors: BTreeMap<String, Tensor>) -> Result<()> {
    let mut problem: Option<Error> = None;
    {
        let mut fill = |name: &str, dst: &mut Tensor| {
            if problem.is_some() {
                return;
            }
            match tensors.remove(name) {
                Some(t) if t.shape == dst.shape => *dst = t,
                Some(t) => {
                    problem = Some(Error::Checkpoint(format!(
                        "{name}: stored shape {:?}, expected {:?}",
                        t.shape, dst.shape
                    )))
                }
                None => problem = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        };
        state.generator.visit_params(&mut |n, p| fill(n, &mut p.value));
        state.generator.visit_buffers(&mut |n, t| fill(n, t));
        state.discriminator.visit_params(&mut |n, p| fill(n, &mut p.value));
        state.discriminator.visit_buffers(&mut |n, t| fill(n, t));
    }
    if let Some(e) = problem {
        return Err(e);
    }
    let restore_adam = |prefix: &str, adam: &mut Adam, tensors: &mut BTreeMap<String, Tensor>| -> Result<()> {
        let m_prefix = format!("{prefix}.m.");
        let names: Vec<String> = tensors
            .keys()
            .filter_map(|k| k.strip_prefix(&m_prefix).map(str::to_string))
            .collect();
        for name in names {
            let m = tensors.remove(&format!("{prefix}.m.{name}")).expect("listed");
            let v = tensors
                .remove(&format!("{prefix}.v.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix} second moment for {name}")))?;
            adam.moments.insert(name, Moments { m, v });
        }
        Ok(())
    };
    restore_adam("adam_g", &mut state.adam_g, &mut tensors)?;
    restore_adam("adam_d", &mut state.adam_d, &mut tensors)?;
    if let Some(name) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(())
}

pub fn save(path: &Path, state: &mut TrainState) -> Result<()> {
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::NetConfig;
    use crate::net::train::{Batch, TrainingShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained() -> TrainState {
        let cfg = TrainConfig {
            net: NetConfig {
                resolution: 16,
                levels: 4,
                channels: vec![2, 4, 4, 4],
                disc_channels: 2,
                views: 3,
                ..NetConfig::default()
            },
            batch: 3,
            ..TrainConfig::default()
        };
        let mut st = TrainState::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = TrainingShape {
            id: "a".into(),
            inputs: (0..3).map(|_| Tensor::uniform(&[1, 1, 16, 16], -1.0, 1.0, &mut rng)).collect(),
            targets: (0..3).map(|_| Tensor::uniform(&[1, 1, 16, 16], -1.0, 1.0, &mut rng)).collect(),
        };
        st.train_step(&Batch::from_views(&shape, &[0, 1, 2]).unwrap()).unwrap();
        st
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut st = trained();
        let bytes = encode(&mut st);
        let mut back = decode(&bytes).unwrap();
        assert_eq!(encode(&mut back), bytes);
        assert_eq!(back.step, 1);
        assert_eq!(back.adam_g.moments, st.adam_g.moments);
    }

    #[test]
    fn corruption_is_detected() {
        let mut st = trained();
        let bytes = encode(&mut st);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[12] ^= 1; // inside the config hash
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Checkpoint(_))));
    }
}
