//! Encoder checkpoints: model header, encoder kind, then a layer manifest
//! where each entry is a tag byte followed by its little-endian arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{BatchNorm, EncoderKind, EncoderModel, Layer, Linear};
use crate::checkpoint::{self, read_f32s, read_u32, write_f32s, ModelKind};
use crate::error::{invalid_data, Error, Result};

const TAG_LINEAR: u8 = 0;
const TAG_BN: u8 = 1;
const TAG_RELU: u8 = 2;

fn write_kind<W: Write>(w: &mut W, kind: EncoderKind) -> Result<()> {
    let (tag, layers, hidden) = match kind {
        EncoderKind::Linear => (0u8, 1, 0),
        EncoderKind::Factorized { layers, hidden } => (1, layers, hidden),
        EncoderKind::Mlp { layers, hidden } => (2, layers, hidden),
    };
    w.write_u8(tag)?;
    w.write_u32::<LittleEndian>(layers as u32)?;
    w.write_u32::<LittleEndian>(hidden as u32)?;
    Ok(())
}

fn read_kind<R: Read>(r: &mut R) -> Result<EncoderKind> {
    let tag = r.read_u8()?;
    let layers = read_u32(r)?;
    let hidden = read_u32(r)?;
    match tag {
        0 => Ok(EncoderKind::Linear),
        1 => Ok(EncoderKind::Factorized { layers, hidden }),
        2 => Ok(EncoderKind::Mlp { layers, hidden }),
        other => invalid_data(format!("unknown encoder kind {other}")),
    }
}

impl EncoderModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        checkpoint::write_header(w, ModelKind::Encoder)?;
        w.write_u32::<LittleEndian>(self.d_in as u32)?;
        w.write_u32::<LittleEndian>(self.d_out as u32)?;
        write_kind(w, self.kind)?;
        w.write_u32::<LittleEndian>(self.net.layers.len() as u32)?;
        for layer in &self.net.layers {
            match layer {
                Layer::Linear(l) => {
                    w.write_u8(TAG_LINEAR)?;
                    w.write_u32::<LittleEndian>(l.output_dim() as u32)?;
                    w.write_u32::<LittleEndian>(l.input_dim() as u32)?;
                    write_f32s(w, l.weight.iter().copied())?;
                    write_f32s(w, l.bias.iter().copied())?;
                }
                Layer::BatchNorm(bn) => {
                    w.write_u8(TAG_BN)?;
                    w.write_u32::<LittleEndian>(bn.width() as u32)?;
                    w.write_f32::<LittleEndian>(bn.eps)?;
                    w.write_f32::<LittleEndian>(bn.momentum)?;
                    for arr in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        write_f32s(w, arr.iter().copied())?;
                    }
                }
                Layer::Relu => w.write_u8(TAG_RELU)?,
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        if checkpoint::read_header(r)? != ModelKind::Encoder {
            return invalid_data("not an encoder checkpoint");
        }
        let d_in = read_u32(r)?;
        let d_out = read_u32(r)?;
        let kind = read_kind(r)?;
        let count = read_u32(r)?;
        let mut layers = Vec::with_capacity(count.min(1024));
        let mut width = d_in;
        for i in 0..count {
            let tag = r.read_u8().map_err(|_| Error::InvalidData("truncated layer manifest".into()))?;
            match tag {
                TAG_LINEAR => {
                    let out = read_u32(r)?;
                    let inp = read_u32(r)?;
                    if inp != width || out == 0 {
                        return invalid_data(format!("layer {i}: linear {inp}->{out} does not follow width {width}"));
                    }
                    let weight = Array2::from_shape_vec((out, inp), read_f32s(r, out * inp)?)
                        .map_err(|e| Error::InvalidData(e.to_string()))?;
                    let bias = Array1::from(read_f32s(r, out)?);
                    layers.push(Layer::Linear(Linear { weight, bias }));
                    width = out;
                }
                TAG_BN => {
                    let n = read_u32(r)?;
                    if n != width {
                        return invalid_data(format!("layer {i}: batch norm width {n} != {width}"));
                    }
                    let eps = r.read_f32::<LittleEndian>()?;
                    let momentum = r.read_f32::<LittleEndian>()?;
                    let gamma = Array1::from(read_f32s(r, n)?);
                    let beta = Array1::from(read_f32s(r, n)?);
                    let running_mean = Array1::from(read_f32s(r, n)?);
                    let running_var = Array1::from(read_f32s(r, n)?);
                    if running_var.iter().any(|&v| v < 0.0) {
                        return invalid_data(format!("layer {i}: negative running variance"));
                    }
                    layers.push(Layer::BatchNorm(BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                        eps,
                        momentum,
                    }));
                }
                TAG_RELU => layers.push(Layer::Relu),
                other => return invalid_data(format!("layer {i}: unknown tag {other}")),
            }
        }
        if width != d_out {
            return invalid_data(format!("layers end at width {width}, header says {d_out}"));
        }
        checkpoint::expect_eof(r)?;
        Ok(EncoderModel::from_parts(kind, d_in, d_out, layers))
    }
}
