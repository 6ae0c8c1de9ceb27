//! Model checkpoint file.
//!
//! Layout (little-endian): magic "ACKP" | version u32 | n_channels u32 |
//! t_days u32 | conv1 (filters, width, stride) 3 x u32 | conv2 3 x u32 |
//! pool (width, stride) 2 x u32 | dropout_p f64 | hidden u32 | n_tasks u32 |
//! share_extractors u8 | n_params u64 | parameters as f64, in the fixed
//! declared order of [`ModelParams`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ConvSpec, ModelConfig, ModelParams, PoolSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACKP";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        cfg.n_channels as u32,
        cfg.t_days as u32,
        cfg.conv1.filters as u32,
        cfg.conv1.width as u32,
        cfg.conv1.stride as u32,
        cfg.conv2.filters as u32,
        cfg.conv2.width as u32,
        cfg.conv2.stride as u32,
        cfg.pool.width as u32,
        cfg.pool.stride as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&cfg.dropout_p.to_le_bytes())?;
    w.write_all(&(cfg.hidden as u32).to_le_bytes())?;
    w.write_all(&(cfg.n_tasks as u32).to_le_bytes())?;
    w.write_all(&[u8::from(cfg.share_extractors)])?;
    w.write_all(&(params.n_params() as u64).to_le_bytes())?;
    for v in &params.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32s = [0u32; 11];
    for v in u32s.iter_mut() {
        *v = read_u32(&mut r)?;
    }
    if u32s[0] != VERSION {
        return Err(bad(&format!("unsupported version {}", u32s[0])));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let dropout_p = f64::from_le_bytes(buf8);
    let hidden = read_u32(&mut r)? as usize;
    let n_tasks = read_u32(&mut r)? as usize;
    let mut share = [0u8; 1];
    r.read_exact(&mut share)?;

    let cfg = ModelConfig {
        n_channels: u32s[1] as usize,
        t_days: u32s[2] as usize,
        conv1: ConvSpec {
            filters: u32s[3] as usize,
            width: u32s[4] as usize,
            stride: u32s[5] as usize,
        },
        conv2: ConvSpec {
            filters: u32s[6] as usize,
            width: u32s[7] as usize,
            stride: u32s[8] as usize,
        },
        pool: PoolSpec {
            width: u32s[9] as usize,
            stride: u32s[10] as usize,
        },
        dropout_p,
        hidden,
        n_tasks,
        share_extractors: share[0] != 0,
    };
    cfg.validate().map_err(|e| bad(&format!("invalid config: {e}")))?;

    r.read_exact(&mut buf8)?;
    let n_params = u64::from_le_bytes(buf8) as usize;
    let mut params = ModelParams::zeros(&cfg).map_err(|e| bad(&e.to_string()))?;
    if params.n_params() != n_params {
        return Err(bad(&format!(
            "parameter count {n_params} does not match config ({})",
            params.n_params()
        )));
    }
    for v in params.data.iter_mut() {
        r.read_exact(&mut buf8)?;
        *v = f64::from_le_bytes(buf8);
    }
    Ok((cfg, params))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
