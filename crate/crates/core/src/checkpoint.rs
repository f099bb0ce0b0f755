//! Common header for model files: 4-byte magic, a version byte and a kind
//! byte. Payloads are little-endian.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{invalid_data, Error, Result};

pub const MAGIC: &[u8; 4] = b"TLDR";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Encoder = 1,
    Pca = 2,
}

pub fn write_header<W: Write>(w: &mut W, kind: ModelKind) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    w.write_u8(kind as u8)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<ModelKind> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::InvalidData("file too short for a model header".into()))?;
    if &magic != MAGIC {
        return invalid_data("not a model file (bad magic)");
    }
    let version = r.read_u8()?;
    if version != VERSION {
        return invalid_data(format!("unsupported model version {version}"));
    }
    match r.read_u8()? {
        1 => Ok(ModelKind::Encoder),
        2 => Ok(ModelKind::Pca),
        other => invalid_data(format!("unknown model kind {other}")),
    }
}

/// Peeks at a file's model kind without parsing the payload.
pub fn model_kind(path: impl AsRef<std::path::Path>) -> Result<ModelKind> {
    let mut f = std::fs::File::open(path)?;
    read_header(&mut f)
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut out = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut out)
        .map_err(|_| Error::InvalidData("truncated model file".into()))?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model parameter".into()));
    }
    Ok(out)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>()
        .map_err(|_| Error::InvalidData("truncated model file".into()))? as usize)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return invalid_data("trailing bytes after model payload");
    }
    Ok(())
}
