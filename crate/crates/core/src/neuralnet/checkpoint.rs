//! Binary checkpoint archive.
//!
//! Layout (little-endian): magic, `u32` echo length + UTF-8 config echo,
//! `u32` parameter count, then per parameter `u32` name length + name,
//! `u32` rank, `u32` dims, `f32` values; then the Adam step (`u64`),
//! `lr, beta1, beta2, eps` (`f32`), and the first and second moments in
//! parameter order.

use std::io::{Read, Write};
use std::path::Path;

use super::adam::AdamState;
use super::tensor::Tensor;
use super::{NnError, ParamSet};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"GFCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form text describing the configuration that produced the weights.
    pub config_echo: String,
    pub params: ParamSet<f32>,
    pub adam: AdamState,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, vals: &[f32]) -> Result<(), NnError> {
    let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, ck.config_echo.len())?;
    w.write_all(ck.config_echo.as_bytes())?;
    put_u32(w, ck.params.len())?;
    for (name, t) in ck.params.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        put_f32s(w, t.data())?;
    }
    let a = &ck.adam;
    w.write_all(&a.step.to_le_bytes())?;
    put_f32s(w, &[a.lr, a.beta1, a.beta2, a.eps])?;
    for buf in a.m.iter().chain(&a.v) {
        put_f32s(w, buf)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, NnError> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| NnError::Checkpoint(format!("truncated archive: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, NnError> {
        let raw = self.bytes(n * 4)?;
        let vals: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Checkpoint("non-finite value in archive".into()));
        }
        Ok(vals)
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| NnError::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, NnError> {
    let mut rd = Reader { inner: r };
    if rd.bytes(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let config_echo = rd.string()?;
    let count = rd.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = rd.string()?;
        let rank = rd.u32()?;
        let shape = (0..rank).map(|_| rd.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().product();
        if params.get(&name).is_some() {
            return Err(NnError::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.push(name, Tensor::new(shape, rd.f32s(n)?)?);
    }
    let step = u64::from_le_bytes(rd.bytes(8)?.try_into().unwrap());
    let h = rd.f32s(4)?;
    let sizes: Vec<usize> = params.tensors().map(Tensor::len).collect();
    let m = sizes.iter().map(|&n| rd.f32s(n)).collect::<Result<Vec<_>, _>>()?;
    let v = sizes.iter().map(|&n| rd.f32s(n)).collect::<Result<Vec<_>, _>>()?;
    let adam = AdamState { step, lr: h[0], beta1: h[1], beta2: h[2], eps: h[3], m, v };
    Ok(Checkpoint { config_echo, params, adam })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NnError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ck)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
