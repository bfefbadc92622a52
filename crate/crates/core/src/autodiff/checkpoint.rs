//! Binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SGMI"  u32 version
//! repeated until EOF:
//!   u64 name_len, name bytes (UTF-8)
//!   u64 rank, rank × u64 dims
//!   product(dims) × f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGMI";
pub const VERSION: u32 = 1;

const MAX_RANK: u64 = 8;

pub fn write_records<'a, W, I>(mut w: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in records {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.rank() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let mut records = Vec::new();
    while cur.pos < buf.len() {
        let name_len = cur.u64("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u64("rank")?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("record `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(cur.u64("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("record `{name}` is too large")))?;
        let raw = cur.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            "values",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[(String, Tensor)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_records(
        std::io::BufWriter::new(file),
        records.iter().map(|(n, t)| (n.as_str(), t)),
    )
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_records(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("w".to_string(), Tensor::matrix(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap()),
            ("b".to_string(), Tensor::scalar(-2.25)),
            ("empty".to_string(), Tensor::zeros(&[0, 3])),
        ]
    }

    fn encode(records: &[(String, Tensor)]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&mut buf, records.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let records = sample();
        let back = read_records(encode(&records).as_slice()).unwrap();
        assert_eq!(back.len(), records.len());
        for ((n1, t1), (n2, t2)) in records.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
    }

    #[test]
    fn layout_header() {
        let buf = encode(&[("a".into(), Tensor::scalar(1.0))]);
        assert_eq!(&buf[..4], b"SGMI");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(buf[16], b'a');
        assert_eq!(&buf[17..25], &0u64.to_le_bytes());
        assert_eq!(&buf[25..33], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 33);
    }

    #[test]
    fn truncated_file_fails() {
        let buf = encode(&sample());
        for cut in [3, 7, 12, buf.len() - 1] {
            assert!(matches!(read_records(&buf[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
    }

    #[test]
    fn wrong_magic_or_version_fails() {
        let mut buf = encode(&sample());
        buf[0] = b'X';
        assert!(read_records(buf.as_slice()).is_err());
        let mut buf = encode(&sample());
        buf[4] = 9;
        let err = read_records(buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
