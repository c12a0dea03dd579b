//! Big-endian IDX files: images (magic 0x00000803) and labels
//! (0x00000801).

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{BenchError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images as rows of pixels scaled to [0, 1], with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledImages {
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, offset: usize, detail: impl Into<String>) -> BenchError {
        BenchError::Format { path: self.path.to_path_buf(), offset, detail: detail.into() }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(self.bytes.len(), format!("file ends before the {what} field")))?;
        let v = u32::from_be_bytes(chunk.try_into().expect("four bytes"));
        self.pos = end;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(self.err(0, format!("magic number {m:#010x}, expected {expected:#010x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.err(
                self.bytes.len(),
                format!("payload needs {len} bytes from offset {}, file has {available}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

/// (count, rows, cols, pixels in [0, 1] with one image per matrix row).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, DMatrix<f64>)> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let size = rows * cols;
    let data = r.payload(count * size)?;
    let x = DMatrix::from_fn(count, size, |i, j| data[i * size + j] as f64 / 255.0);
    Ok((rows, cols, x))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    Ok(r.payload(count)?.iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| BenchError::io(path, e))
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<LabelledImages> {
    let (rows, cols, x) = parse_idx_images(&read(images)?, images)?;
    let labels_vec = parse_idx_labels(&read(labels)?, labels)?;
    if labels_vec.len() != x.nrows() {
        return Err(BenchError::Format {
            path: labels.to_path_buf(),
            offset: 4,
            detail: format!("{} labels for {} images", labels_vec.len(), x.nrows()),
        });
    }
    Ok(LabelledImages { x, labels: labels_vec, rows, cols })
}

fn pick(dir: &Path, names: &[&str]) -> PathBuf {
    names.iter().map(|n| dir.join(n)).find(|p| p.exists()).unwrap_or_else(|| dir.join(names[0]))
}

/// The four files of the standard distribution, with either `-` or `.` before
/// `idx`.
pub fn load_mnist(dir: &Path) -> Result<(LabelledImages, LabelledImages)> {
    let train = load_idx(
        &pick(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
        &pick(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]),
    )?;
    let test = load_idx(
        &pick(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
        &pick(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]),
    )?;
    Ok((train, test))
}
