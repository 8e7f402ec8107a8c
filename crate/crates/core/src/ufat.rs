//! UFAT: a minimal little-endian container for named f32 tensors.
//!
//! ```text
//! "UFAT"            4 bytes magic
//! version           u32
//! repeated until EOF:
//!   name_len        u32
//!   name            name_len bytes, UTF-8
//!   ndim            u32
//!   dims            ndim x u32
//!   payload         product(dims) x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"UFAT";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u32::try_from(name.len()).map_err(|_| Error::invalid("tensor name too long"))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_file(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), tensors)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Streaming reader that can skip payloads it does not need.
pub struct UfatReader<R> {
    inner: R,
}

/// Header of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<R: Read + Seek> UfatReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        inner.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::invalid("not a UFAT stream (bad magic)"));
        }
        let version = read_u32(&mut inner)?;
        if version != VERSION {
            return Err(Error::invalid(format!("unsupported UFAT version {version}")));
        }
        Ok(UfatReader { inner })
    }

    /// Next header, or `None` at a clean end of stream.
    fn next_entry(&mut self) -> Result<Option<Entry>> {
        let name_len = match read_u32(&mut self.inner) {
            Ok(n) => n as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut name = vec![0u8; name_len];
        self.inner.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::invalid("tensor name is not UTF-8"))?;
        let ndim = read_u32(&mut self.inner)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u32(&mut self.inner).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Some(Entry { name, shape }))
    }

    fn read_payload(&mut self, shape: &[usize]) -> Result<Vec<f32>> {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        self.inner.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn skip_payload(&mut self, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        self.inner.seek(SeekFrom::Current(n as i64 * 4))?;
        Ok(())
    }

    pub fn read_all(mut self) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::new();
        while let Some(entry) = self.next_entry()? {
            let data = self.read_payload(&entry.shape)?;
            out.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        Ok(out)
    }

    /// Reads only the tensor called `name`, seeking past the others.
    pub fn read_named(mut self, name: &str) -> Result<Option<Tensor>> {
        while let Some(entry) = self.next_entry()? {
            if entry.name == name {
                let data = self.read_payload(&entry.shape)?;
                return Ok(Some(Tensor::new(entry.shape, data)?));
            }
            self.skip_payload(&entry.shape)?;
        }
        Ok(None)
    }

    pub fn entries(mut self) -> Result<Vec<Entry>> {
        let mut out = Vec::new();
        while let Some(entry) = self.next_entry()? {
            self.skip_payload(&entry.shape)?;
            out.push(entry);
        }
        Ok(out)
    }
}

fn open(path: &Path) -> Result<UfatReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::file(path, e.to_string()))?;
    UfatReader::new(BufReader::new(f)).map_err(|e| Error::file(path, e.to_string()))
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    open(path)?.read_all().map_err(|e| Error::file(path, e.to_string()))
}

pub fn read_named(path: &Path, name: &str) -> Result<Tensor> {
    open(path)?
        .read_named(name)
        .map_err(|e| Error::file(path, e.to_string()))?
        .ok_or_else(|| Error::file(path, format!("no tensor named {name:?}")))
}
