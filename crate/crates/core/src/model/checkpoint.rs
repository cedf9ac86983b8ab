//! Binary checkpoint: magic `RPM1`, a `u32` format version, the model and
//! sampler header as `u32` fields, then every parameter tensor in declaration
//! order as `u32` rank, `u32` dims and little-endian `f64` data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::{Architecture, ModelDims, ModelParams};
use super::ModelError;
use crate::autodiff::Tensor;
use crate::sampling::{SampleSpec, SamplerVariant};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RPM1";
const VERSION: u32 = 1;

/// Trained parameters plus the anchor sampler they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub sampler: SampleSpec,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<(), ModelError> {
    let d = ckpt.params.dims();
    let s = &ckpt.sampler;
    let mut buf = Vec::with_capacity(64 + 8 * ckpt.params.num_scalars());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let header = [
        VERSION,
        d.arch.code(),
        as_u32(d.n_in)?,
        as_u32(d.anchors)?,
        as_u32(d.width)?,
        as_u32(d.attn_dim)?,
        as_u32(d.group_k)?,
        as_u32(d.embed_hidden)?,
        as_u32(d.head_hidden)?,
        as_u32(d.classes)?,
        as_u32(d.layers)?,
        s.variant.code(),
        as_u32(s.m)?,
        as_u32(s.k)?,
        as_u32(s.fps_start)?,
        as_u32(ckpt.params.tensors().len())?,
    ];
    for v in header {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for t in ckpt.params.tensors() {
        buf.extend_from_slice(&as_u32(t.shape().len())?.to_le_bytes());
        for &dim in t.shape() {
            buf.extend_from_slice(&as_u32(dim)?.to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("missing RPM1 magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let arch_code = cur.u32()?;
    let arch = Architecture::from_code(arch_code)
        .ok_or_else(|| ModelError::Format(format!("unknown architecture code {arch_code}")))?;
    let dims = ModelDims {
        arch,
        n_in: cur.usize()?,
        anchors: cur.usize()?,
        width: cur.usize()?,
        attn_dim: cur.usize()?,
        group_k: cur.usize()?,
        embed_hidden: cur.usize()?,
        head_hidden: cur.usize()?,
        classes: cur.usize()?,
        layers: cur.usize()?,
    };
    let variant_code = cur.u32()?;
    let variant = SamplerVariant::from_code(variant_code)
        .ok_or_else(|| ModelError::Format(format!("unknown sampler code {variant_code}")))?;
    let sampler = SampleSpec {
        m: cur.usize()?,
        k: cur.usize()?,
        variant,
        fps_start: cur.usize()?,
    };
    let count = cur.usize()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = cur.usize()?;
        if rank > 8 {
            return Err(ModelError::Format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| cur.usize()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - cur.pos) / 8)
            .ok_or_else(|| ModelError::Format("tensor larger than the file".into()))?;
        let raw = cur.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(ModelError::Format(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let params = ModelParams::from_tensors(dims, tensors)?;
    Ok(Checkpoint { params, sampler })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    read_checkpoint(fs::File::open(path)?)
}

fn as_u32(v: usize) -> Result<u32, ModelError> {
    u32::try_from(v).map_err(|_| ModelError::Format(format!("{v} does not fit in u32")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize, ModelError> {
        Ok(self.u32()? as usize)
    }
}
