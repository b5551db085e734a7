//! Labelled sample matrix and its little-endian binary file format.
//!
//! Layout: magic `TOCO`, then `u32` version (=1), `u32` n_samples, `u32` dim,
//! `u32` n_classes, `n_samples * dim` `f32` features in row-major order and
//! finally `n_samples` `u32` labels.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TOCO";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, n_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dataset dimension must be positive".into()));
        }
        if n_classes == 0 {
            return Err(Error::Shape("n_classes must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::Shape(format!(
                "label {l} of sample {i} is not below n_classes={n_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Copies the listed samples, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.dim, self.n_classes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.features.len() + self.len()));
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.dim as u32, self.n_classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &x in &self.features {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse {
                offset: 4,
                detail: format!("unsupported version {version}"),
            });
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        if dim == 0 || n_classes == 0 {
            return Err(Error::Parse {
                offset: 12,
                detail: "dim and n_classes must be positive".into(),
            });
        }
        let expected = n
            .checked_mul(dim)
            .and_then(|f| f.checked_add(n))
            .and_then(|w| w.checked_mul(4))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Parse {
                offset: 8,
                detail: "header sizes overflow".into(),
            })?;
        if bytes.len() != expected {
            return Err(Error::Parse {
                offset: bytes.len().min(expected),
                detail: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let mut features = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            features.push(f32::from_le_bytes(r.array()?) as f64);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos;
            let l = r.u32()? as usize;
            if l >= n_classes {
                return Err(Error::Parse {
                    offset: at,
                    detail: format!("label {l} not below n_classes={n_classes}"),
                });
            }
            labels.push(l);
        }
        Dataset::new(features, labels, dim, n_classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                detail: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array(&mut self) -> Result<[u8; 4]> {
        let s = self.take(4)?;
        Ok([s[0], s[1], s[2], s[3]])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
