//! Binary feature cache.
//!
//! Layout (little-endian):
//!   magic "ACTF" | version u32 | layer u8 | t u32 | d u32 | n_users u32
//!   then per user: id_len u32 | id bytes | t*d f64 values (row-major)
//!   | ceil(t*d / 8) mask bytes, LSB-first.
//!
//! A sidecar `<stem>.meta.json` lists the layer, shape, and feature names.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureFrame, LayerLevel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACTF";
const VERSION: u32 = 1;

pub fn write_feature_cache(path: &Path, frames: &[FeatureFrame]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::FeatureCache("cannot write empty frame set".into()))?;
    let (layer, t, d) = (first.layer, first.t_days, first.dims);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[layer_code(layer)])?;
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;

    for f in frames {
        if f.layer != layer || f.t_days != t || f.dims != d {
            return Err(Error::FeatureCache(format!(
                "frame {} has mismatched shape",
                f.user_id
            )));
        }
        let id = f.user_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        for v in &f.values {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut bits = vec![0u8; f.mask.len().div_ceil(8)];
        for (i, &m) in f.mask.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<Vec<FeatureFrame>> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::FeatureCache(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut layer_byte = [0u8; 1];
    r.read_exact(&mut layer_byte)?;
    let layer = layer_from_code(layer_byte[0]).ok_or_else(|| bad("bad layer code"))?;
    let t = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let n_users = read_u32(&mut r)? as usize;
    if d != layer.dims() {
        return Err(bad(&format!("dims {d} inconsistent with layer {}", layer.name())));
    }

    let mut frames = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let id_len = read_u32(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let user_id = String::from_utf8(id).map_err(|_| bad("non-utf8 user id"))?;

        let mut values = vec![0.0f64; t * d];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let mut bits = vec![0u8; (t * d).div_ceil(8)];
        r.read_exact(&mut bits)?;
        let mask = (0..t * d).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();

        frames.push(FeatureFrame {
            user_id,
            layer,
            t_days: t,
            dims: d,
            values,
            mask,
        });
    }
    Ok(frames)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn layer_code(layer: LayerLevel) -> u8 {
    LayerLevel::ALL.iter().position(|&l| l == layer).unwrap() as u8
}

fn layer_from_code(code: u8) -> Option<LayerLevel> {
    LayerLevel::ALL.get(code as usize).copied()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub layer: String,
    pub t_days: usize,
    pub dims: usize,
    pub n_users: usize,
    pub feature_names: Vec<String>,
}

pub fn write_feature_meta(path: &Path, frames: &[FeatureFrame]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::FeatureCache("cannot write empty frame set".into()))?;
    let meta = FeatureMeta {
        layer: first.layer.name().to_string(),
        t_days: first.t_days,
        dims: first.dims,
        n_users: frames.len(),
        feature_names: first.feature_names().iter().map(|s| s.to_string()).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_feature_meta(path: &Path) -> Result<FeatureMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
