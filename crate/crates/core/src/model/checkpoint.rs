//! Versioned binary checkpoint of named tensors.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SERCKPT\0"
//! version  u32      1
//! meta_len u32      followed by meta_len bytes of JSON metadata
//! count    u32      number of tensors
//! tensor*  u32 name_len, name (UTF-8), u32 ndim, u64 dims[ndim], f64 values
//! ```
//!
//! Center state is stored as the tensors `centers`, `centers.alpha` and
//! `centers.iteration` next to the model parameters.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dsp::{DspConfig, Frontend};
use crate::error::{Error, Result};
use crate::losses::CenterBank;
use crate::model::{EncoderConfig, ModelParams};

const MAGIC: &[u8; 8] = b"SERCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    pub dsp: DspConfig,
    pub frontend: Frontend,
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
    pub centers: CenterBank,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(Error::Container("tensor name too long".into()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name =
        String::from_utf8(name).map_err(|_| Error::Container("tensor name not UTF-8".into()))?;
    let ndim = read_u32(r)? as usize;
    if ndim > 8 {
        return Err(Error::Container(format!("{name}: rank {ndim} too large")));
    }
    let shape = (0..ndim)
        .map(|_| read_u64(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(&mut w, CHECKPOINT_VERSION)?;
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Container(e.to_string()))?;
        write_u32(&mut w, meta.len() as u32)?;
        w.write_all(&meta)?;
        write_u32(&mut w, (self.params.tensors().len() + 3) as u32)?;
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            write_tensor(&mut w, name, t)?;
        }
        write_tensor(&mut w, "centers", self.centers.centers())?;
        write_tensor(
            &mut w,
            "centers.alpha",
            &Tensor::scalar(self.centers.alpha()),
        )?;
        write_tensor(
            &mut w,
            "centers.iteration",
            &Tensor::scalar(self.centers.iteration() as f64),
        )?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container("not a checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Container(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&meta).map_err(|e| Error::Container(e.to_string()))?;
        let count = read_u32(&mut r)? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            named.push(read_tensor(&mut r)?);
        }
        let mut take = |key: &str| -> Result<Tensor> {
            let i = named
                .iter()
                .position(|(n, _)| n == key)
                .ok_or_else(|| Error::Container(format!("missing tensor {key}")))?;
            Ok(named.swap_remove(i).1)
        };
        let centers = take("centers")?;
        let alpha = take("centers.alpha")?.item();
        let iteration = take("centers.iteration")?.item() as u64;
        let centers = CenterBank::from_parts(centers, alpha, iteration)?;
        let params = ModelParams::from_named(&meta.encoder, named)?;
        if centers.dim() != meta.encoder.feature_dim
            || centers.n_classes() != meta.encoder.n_classes
        {
            return Err(Error::Container(
                "center bank does not match the encoder".into(),
            ));
        }
        Ok(Self {
            meta,
            params,
            centers,
        })
    }
}
