//! Flat binary checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "CSSL" | version | block count (3)
//! for each block (w_l, w_lu, w_gamma): layer count, then per layer: in, out, activation
//! for each block, for each layer: in·out weights (row-major), then out biases, as f64 LE
//! ```
//!
//! Activation codes: 0 ReLU, 1 identity, 2 softmax.

use std::io::{Read, Write};
use std::path::Path;

use super::{CsslError, CsslModel};
use crate::nn::{Activation, Layer, Matrix, ParamBlock};

const MAGIC: &[u8; 4] = b"CSSL";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &CsslModel, mut w: W) -> std::io::Result<()> {
    let blocks = [&model.w_l, &model.w_lu, &model.w_gamma];
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for b in blocks {
        w.write_all(&(b.layers().len() as u32).to_le_bytes())?;
        for l in b.layers() {
            for v in [l.in_dim() as u32, l.out_dim() as u32, l.activation.code()] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    for b in blocks {
        for l in b.layers() {
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8], CsslError> {
        let s = self.buf.get(self.pos..self.pos + len).ok_or(CsslError::Format {
            offset: self.pos,
            msg: "unexpected end of file".into(),
        })?;
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CsslError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, CsslError> {
        let b = self.take(count * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<CsslModel, CsslError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| CsslError::Io {
        path: "<reader>".into(),
        source: e,
    })?;
    let mut rd = Reader { buf: &buf, pos: 0 };
    if rd.take(4)? != MAGIC {
        return Err(CsslError::Format {
            offset: 0,
            msg: "missing CSSL magic".into(),
        });
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(CsslError::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = rd.u32()?;
    if count != 3 {
        return Err(CsslError::Format {
            offset: 8,
            msg: format!("expected 3 blocks, found {count}"),
        });
    }
    let mut shapes = Vec::with_capacity(3);
    for _ in 0..3 {
        let layers = rd.u32()?;
        let mut shape = Vec::with_capacity(layers as usize);
        for _ in 0..layers {
            let at = rd.pos;
            let (i, o, a) = (rd.u32()? as usize, rd.u32()? as usize, rd.u32()?);
            let act = Activation::from_code(a).ok_or(CsslError::Format {
                offset: at + 8,
                msg: format!("unknown activation code {a}"),
            })?;
            shape.push((i, o, act));
        }
        shapes.push(shape);
    }
    let mut blocks = Vec::with_capacity(3);
    for shape in shapes {
        let mut layers = Vec::with_capacity(shape.len());
        for (i, o, activation) in shape {
            let weight = Matrix::from_vec(i, o, rd.f64s(i * o)?)?;
            let bias = rd.f64s(o)?;
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        blocks.push(ParamBlock::from_layers(layers)?);
    }
    if rd.pos != buf.len() {
        return Err(CsslError::Format {
            offset: rd.pos,
            msg: "trailing bytes".into(),
        });
    }
    let w_gamma = blocks.pop().expect("three blocks");
    let w_lu = blocks.pop().expect("three blocks");
    let w_l = blocks.pop().expect("three blocks");
    CsslModel::from_blocks(w_l, w_lu, w_gamma)
}

pub fn save_checkpoint(model: &CsslModel, path: &Path) -> Result<(), CsslError> {
    let io = |e| CsslError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let f = std::fs::File::create(path).map_err(io)?;
    write_checkpoint(model, std::io::BufWriter::new(f)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<CsslModel, CsslError> {
    let f = std::fs::File::open(path).map_err(|e| CsslError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_checkpoint(f)
}
