//! Binary checkpoint format.
//!
//! ```text
//! magic    4 bytes   b"DSAT"
//! version  u8        1
//! count    u64 LE    number of records
//! record * count:
//!   name_len u32 LE, name (UTF-8, name_len bytes)
//!   rank     u32 LE
//!   extents  u64 LE * rank
//!   values   f32 LE * product(extents), row-major
//! ```
//!
//! Values are always stored in single precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DSAT";
pub const VERSION: u8 = 1;

/// Ordered `(name, tensor)` records.
pub type Records = Vec<(String, Tensor<f32>)>;

pub fn encode<'a, T: Scalar, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> std::io::Result<()> {
    let records: Vec<_> = records.into_iter().collect();
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            let f = v.to_f32().unwrap_or(f32::NAN);
            w.write_all(&f.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn decode<R: Read>(mut r: R) -> Result<Records> {
    if read_exact::<_, 4>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let [version] = read_exact::<_, 1>(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| read_exact(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("{name}: truncated values: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save<'a, T: Scalar>(
    path: &Path,
    records: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode(BufWriter::new(f), records).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Records> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(BufReader::new(f)).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Iterates records as `(&str, &Tensor)` pairs.
pub fn view(records: &Records) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
    records.iter().map(|(n, t)| (n.as_str(), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(&[2], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        encode(&mut buf, [("ab", &t)]).unwrap();
        let mut want = b"DSAT\x01".to_vec();
        want.extend(1u64.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(b"ab");
        want.extend(1u32.to_le_bytes());
        want.extend(2u64.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(&b"XXXX\x01"[..]).is_err());
        let t = Tensor::<f32>::ones(&[3]);
        let mut buf = Vec::new();
        encode(&mut buf, [("w", &t)]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(decode(&buf[..]), Err(Error::Checkpoint(_))));
    }
}
