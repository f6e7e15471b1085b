//! Portable binary checkpoint container. Byte layout (all integers
//! little-endian, documented in docs/checkpoint-format.md):
//!
//!   magic   8  b"HRNNCKPT"
//!   version u32 (= 1)
//!   dtype   u8  (0 = f32, 1 = f64)
//!   adam_t  u64
//!   count   u32 number of parameter tensors
//!   then per tensor, in name order:
//!     name_len u16, name bytes (UTF-8)
//!     ndim     u8,  dims as u64 each
//!     values   raw little-endian scalars (len = product of dims)
//!     adam_m   raw little-endian scalars (same len)
//!     adam_v   raw little-endian scalars (same len)

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::layers::{AdamHyper, AdamState, ParamSet};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"HRNNCKPT";
const VERSION: u32 = 1;

pub fn save<F: Real>(path: &Path, params: &ParamSet<F>, adam: &AdamState<F>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u8(F::DTYPE_TAG)?;
    out.write_u64::<LittleEndian>(adam.t)?;
    out.write_u32::<LittleEndian>(params.len() as u32)?;
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        out.write_u16::<LittleEndian>(name_bytes.len() as u16)?;
        out.extend_from_slice(name_bytes);
        out.write_u8(tensor.shape.len() as u8)?;
        for &d in &tensor.shape {
            out.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in &tensor.values {
            v.write_le(&mut out);
        }
        let m = adam
            .m
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing first moment for {name}")))?;
        let v = adam
            .v
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {name}")))?;
        for &x in m {
            x.write_le(&mut out);
        }
        for &x in v {
            x.write_le(&mut out);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load<F: Real>(path: &Path, hyper: AdamHyper) -> Result<(ParamSet<F>, AdamState<F>)> {
    let bytes = std::fs::read(path)?;
    let mut cur = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a checkpoint file)".into()));
    }
    let version = cur.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dtype = cur.read_u8()?;
    if dtype != F::DTYPE_TAG {
        return Err(Error::Checkpoint(format!(
            "checkpoint dtype tag {dtype} does not match run precision {}",
            F::NAME
        )));
    }
    let adam_t = cur.read_u64::<LittleEndian>()?;
    let count = cur.read_u32::<LittleEndian>()? as usize;

    let mut params = ParamSet::new();
    let mut m = std::collections::BTreeMap::new();
    let mut v = std::collections::BTreeMap::new();
    let read_scalars = |cur: &mut std::io::Cursor<&Vec<u8>>, n: usize| -> Result<Vec<F>> {
        let mut buf = vec![0u8; n * F::BYTES];
        cur.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
        Ok(buf.chunks_exact(F::BYTES).map(F::read_le).collect())
    };
    for _ in 0..count {
        let name_len = cur.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("non-UTF8 tensor name".into()))?;
        let ndim = cur.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.read_u64::<LittleEndian>()? as usize);
        }
        let n: usize = shape.iter().product();
        let values = read_scalars(&mut cur, n)?;
        let m_vals = read_scalars(&mut cur, n)?;
        let v_vals = read_scalars(&mut cur, n)?;
        params.insert(name.clone(), shape, values);
        m.insert(name.clone(), m_vals);
        v.insert(name, v_vals);
    }
    let adam = AdamState {
        hyper,
        t: adam_t,
        m,
        v,
    };
    Ok((params, adam))
}
