//! IDX reader for MNIST-style files.
//!
//! Images: big-endian `u32` magic `0x00000803`, then count, rows, cols, then
//! `count·rows·cols` unsigned pixel bytes. Labels: magic `0x00000801`, count,
//! then one byte per label.

use std::path::Path;

use super::DataError;
use crate::nn::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> DataError {
        DataError::Format {
            path: self.path.display().to_string(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32, DataError> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.pos, "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: expected {len} bytes from offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Loads an image/label file pair. Pixels are scaled by 1/255 into `[0, 1]`.
pub fn mnist_load_idx(images: &Path, labels: &Path) -> Result<(Matrix, Vec<usize>), DataError> {
    let img_bytes = read(images)?;
    let mut c = Cursor {
        path: images,
        bytes: &img_bytes,
        pos: 0,
    };
    let magic = c.u32_be()?;
    if magic != IMAGE_MAGIC {
        return Err(c.err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    let pixels = c.take(count * rows * cols)?;
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let x = Matrix::from_vec(count, rows * cols, data).expect("length checked above");

    let lbl_bytes = read(labels)?;
    let mut c = Cursor {
        path: labels,
        bytes: &lbl_bytes,
        pos: 0,
    };
    let magic = c.u32_be()?;
    if magic != LABEL_MAGIC {
        return Err(c.err(0, format!("bad label magic {magic:#010x}")));
    }
    let n = c.u32_be()? as usize;
    if n != count {
        return Err(c.err(4, format!("{n} labels for {count} images")));
    }
    let start = c.pos;
    let raw = c.take(n)?;
    let mut y = Vec::with_capacity(n);
    for (i, &b) in raw.iter().enumerate() {
        if b > 9 {
            return Err(c.err(start + i, format!("label {b} outside 0-9")));
        }
        y.push(usize::from(b));
    }
    Ok((x, y))
}

/// Writes an IDX image file from raw pixel bytes.
pub fn write_idx_images(path: &Path, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<(), DataError> {
    if pixels.len() != count * rows * cols {
        return Err(DataError::Config(format!(
            "{} pixel bytes for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_images_load_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&img, 2, 28, 28, &[0u8; 2 * 784]).unwrap();
        write_idx_labels(&lbl, &[3, 7]).unwrap();
        let (x, y) = mnist_load_idx(&img, &lbl).unwrap();
        assert_eq!(x.shape(), (2, 784));
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(y, vec![3, 7]);
    }

    #[test]
    fn pixels_scale_to_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&img, 1, 1, 2, &[255, 51]).unwrap();
        write_idx_labels(&lbl, &[0]).unwrap();
        let (x, _) = mnist_load_idx(&img, &lbl).unwrap();
        assert_eq!(x.row(0), &[1.0, 0.2]);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&img, 2, 2, 2, &[0u8; 8]).unwrap();

        write_idx_labels(&lbl, &[1, 12]).unwrap();
        match mnist_load_idx(&img, &lbl) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("expected format error, got {other:?}"),
        }

        // labels file with the image magic
        std::fs::copy(&img, &lbl).unwrap();
        assert!(matches!(mnist_load_idx(&img, &lbl), Err(DataError::Format { offset: 0, .. })));

        // truncated pixel payload
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
        write_idx_labels(&lbl, &[1, 2]).unwrap();
        assert!(matches!(mnist_load_idx(&img, &lbl), Err(DataError::Format { .. })));

        assert!(matches!(
            mnist_load_idx(&dir.path().join("missing"), &lbl),
            Err(DataError::Io { .. })
        ));
    }
}
