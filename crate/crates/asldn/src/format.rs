//! `ASLT` tensor files and `ASLW` weight files.
//!
//! ASLT: `b"ASLT"`, u8 version (1), u8 dtype (0 = f32, 1 = f64), u8 rank,
//! rank x u32 LE dims, then the little-endian payload.
//!
//! ASLW: `b"ASLW"`, u8 version (1), u32 LE record count, then per record a
//! u32 LE name length, the UTF-8 name and one embedded ASLT blob.

use std::fs;
use std::io::Write;
use std::path::Path;

use asldn_core::{NetworkParameters, Scalar, Tensor};

use crate::error::{Error, IoContext, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"ASLT";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"ASLW";
pub const VERSION: u8 = 1;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::Invalid(format!("rank {} does not fit the header", t.ndim())));
    }
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.len() * T::BYTES);
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated(self.what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, magic: &'static [u8; 4]) -> Result<()> {
        let expected = std::str::from_utf8(magic).expect("ascii magic");
        if self.buf.len() < 4 || &self.buf[..4] != magic {
            return Err(Error::BadMagic { expected });
        }
        self.take(4)?;
        Ok(())
    }

    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let saved = self.what;
        self.what = "tensor";
        self.magic(TENSOR_MAGIC)?;
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = self.u8()?;
        if dtype > 1 {
            return Err(Error::UnknownDType(dtype));
        }
        if dtype != T::DTYPE as u8 {
            return Err(Error::DTypeMismatch {
                expected: T::DTYPE as u8,
                found: dtype,
            });
        }
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(T::BYTES))
            .ok_or(Error::Truncated("tensor"))?;
        let payload = self.take(n)?;
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        self.what = saved;
        Ok(Tensor::from_vec(&shape, data)?)
    }
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader { buf: bytes, what: "tensor" };
    let t = r.tensor()?;
    if !r.buf.is_empty() {
        return Err(Error::TrailingBytes(r.buf.len()));
    }
    Ok(t)
}

pub fn encode_params<T: Scalar>(params: &NetworkParameters<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(params.scalar_count() * T::BYTES + 64 * params.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

/// Decodes a whole weight file; nothing is returned unless every record parses.
pub fn decode_params<T: Scalar>(bytes: &[u8]) -> Result<NetworkParameters<T>> {
    let mut r = Reader { buf: bytes, what: "weights" };
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()? as usize;
    let mut entries: Vec<(String, Tensor<T>)> = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::BadName)?.to_owned();
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::DuplicateName(name));
        }
        let t = r.tensor()?;
        entries.push((name, t));
    }
    if !r.buf.is_empty() {
        return Err(Error::TrailingBytes(r.buf.len()));
    }
    Ok(NetworkParameters::new(entries)?)
}

/// Writes through a sibling temp file and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).at(&tmp)?;
    f.write_all(bytes).at(&tmp)?;
    f.sync_all().at(&tmp)?;
    drop(f);
    fs::rename(&tmp, path).at(path)
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_tensor(&fs::read(path).at(path)?)
}

pub fn save_params<T: Scalar>(path: &Path, params: &NetworkParameters<T>) -> Result<()> {
    write_atomic(path, &encode_params(params)?)
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<NetworkParameters<T>> {
    decode_params(&fs::read(path).at(path)?)
}
