//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic     8 bytes "AAPLCKPT"
//! version   u32 (= 1)
//! count     u32
//! count blocks of:
//!   name_len u32, name (utf-8), ndim u32, ndim x u64 extents,
//!   prod(extents) x f64
//! ```

use std::io::{Read, Write};

use super::model::PromptModel;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AAPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_tensors<W: Write>(w: &mut W, named: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, t) in named {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &s in t.shape() {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_from<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32_from(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32_from(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut name = vec![0u8; u32_from(r)? as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let ndim = u32_from(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut b8 = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

impl PromptModel {
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let named: Vec<(&str, &Tensor)> = Self::PARAMETER_NAMES.iter().copied().zip(self.parameters()).collect();
        write_tensors(w, &named)
    }

    /// Overwrites every parameter from a checkpoint written by [`PromptModel::save`].
    pub fn load<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let tensors = read_tensors(r)?;
        for expected in Self::PARAMETER_NAMES {
            if !tensors.iter().any(|(n, _)| n == expected) {
                return Err(Error::Format(format!("checkpoint lacks parameter '{expected}'")));
            }
        }
        for (name, t) in tensors {
            self.set_parameter(&name, t)?;
        }
        Ok(())
    }
}
