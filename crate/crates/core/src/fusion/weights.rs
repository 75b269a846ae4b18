//! Named tensor store and its binary file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "KFRW"
//! version u32            (currently 1)
//! count   u32
//! count x {
//!     name_len u16, name (UTF-8, name_len bytes)
//!     rank u8, dims u32 x rank
//!     payload f32 x prod(dims)
//! }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::tensor::ConvKernel;

pub const MAGIC: &[u8; 4] = b"KFRW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("tensor {shape:?} from {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Insertion-ordered collection of named tensors. Immutable once handed to
/// the network, so a single store can back concurrent restorations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Loads `{prefix}.weight` (OIHW) and `{prefix}.bias`.
    pub fn conv(&self, prefix: &str) -> Result<(ConvKernel, Vec<f64>)> {
        let wname = format!("{prefix}.weight");
        let w = self.require(&wname)?;
        let [o, i, kh, kw] = w.shape[..] else {
            return Err(Error::ShapeMismatch(format!("`{wname}` must be rank 4, has shape {:?}", w.shape)));
        };
        let bname = format!("{prefix}.bias");
        let b = self.require(&bname)?;
        if b.shape != [o] {
            return Err(Error::ShapeMismatch(format!("`{bname}` has shape {:?}, expected [{o}]", b.shape)));
        }
        Ok((ConvKernel::new(o, i, kh, kw, w.to_f64())?, b.to_f64()))
    }

    /// Inserts a `{prefix}.weight` / `{prefix}.bias` pair drawn uniformly
    /// from `+-gain * sqrt(3 / fan_in)`; the bias is set to `bias`.
    pub fn insert_random_conv(
        &mut self,
        prefix: &str,
        shape: [usize; 4],
        gain: f64,
        bias: f32,
        rng: &mut impl Rng,
    ) {
        let [o, i, kh, kw] = shape;
        let bound = gain * (3.0 / (i * kh * kw) as f64).sqrt();
        let data = (0..o * i * kh * kw).map(|_| rng.random_range(-bound..bound) as f32).collect();
        self.insert(format!("{prefix}.weight"), Tensor { shape: shape.to_vec(), data });
        self.insert(format!("{prefix}.bias"), Tensor { shape: vec![o], data: vec![bias; o] });
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32::try_from(self.tensors.len()).map_err(|_| too_large("tensor count"))?.to_le_bytes())?;
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| too_large("tensor name"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[u8::try_from(t.shape.len()).map_err(|_| too_large("tensor rank"))?])?;
            for &d in &t.shape {
                w.write_all(&u32::try_from(d).map_err(|_| too_large("tensor dimension"))?.to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail for valid stores");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::WeightFormat(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r, "tensor count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, "name length")?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut name, "name")?;
            let name = String::from_utf8(name).map_err(|e| Error::WeightFormat(format!("name is not UTF-8: {e}")))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank, "rank")?;
            let shape = (0..rank[0]).map(|_| read_u32(&mut r, "dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut payload = vec![0u8; n * 4];
            read_exact(&mut r, &mut payload, "payload")?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if store.contains(&name) {
                return Err(Error::WeightFormat(format!("duplicate tensor `{name}`")));
            }
            store.insert(name, Tensor { shape, data });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::WeightFormat("trailing bytes after last tensor".into()));
        }
        Ok(store)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn too_large(what: &str) -> Error {
    Error::WeightFormat(format!("{what} exceeds the format's range"))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::WeightFormat(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
