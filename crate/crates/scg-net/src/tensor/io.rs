//! TSR v1 tensor file format.
//!
//! Layout: magic `TSR1`, u8 dtype code (1 = f32, 2 = f64), u8 rank,
//! rank little-endian u64 extents, then the row-major payload in the
//! declared dtype, little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const TSR_MAGIC: &[u8; 4] = b"TSR1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::CorruptFile(format!("unknown dtype code {other}"))),
        }
    }
}

const MAX_RANK: u8 = 8;

pub fn write_tsr(w: &mut impl Write, data: &[f64], shape: &[usize], dtype: Dtype) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    assert!(shape.len() <= MAX_RANK as usize, "rank above TSR limit");
    w.write_all(TSR_MAGIC)?;
    w.write_all(&[dtype.code(), shape.len() as u8])?;
    for &extent in shape {
        w.write_all(&(extent as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F32 => {
            for &v in data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads one TSR v1 record; values widen to f64.
pub fn read_tsr(r: &mut impl Read) -> Result<(Vec<f64>, Vec<usize>, Dtype)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != TSR_MAGIC {
        return Err(Error::CorruptFile(format!("bad TSR magic {magic:?}")));
    }
    let mut header = [0u8; 2];
    read_exact(r, &mut header)?;
    let dtype = Dtype::from_code(header[0])?;
    let rank = header[1];
    if rank > MAX_RANK {
        return Err(Error::CorruptFile(format!("rank {rank} above TSR limit")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        read_exact(r, &mut buf)?;
        let extent = u64::from_le_bytes(buf) as usize;
        if extent == 0 {
            return Err(Error::CorruptFile("zero extent".into()));
        }
        numel = numel
            .checked_mul(extent)
            .ok_or_else(|| Error::CorruptFile("extent overflow".into()))?;
        shape.push(extent);
    }
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                read_exact(r, &mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                read_exact(r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
    }
    Ok((data, shape, dtype))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptFile("truncated TSR record".into())
        } else {
            Error::Io(e)
        }
    })
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tsr(&mut w, t.data(), t.shape(), Dtype::F64)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let (data, shape, _) = read_tsr(&mut r)?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::CorruptFile("trailing bytes after TSR record".into()));
    }
    Tensor::from_vec(data, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f64() {
        let data = vec![1.5, -2.25, 0.0, 1e-300, 3.7e12, -0.125];
        let shape = vec![2, 3];
        let mut buf = Vec::new();
        write_tsr(&mut buf, &data, &shape, Dtype::F64).unwrap();
        assert_eq!(&buf[..4], TSR_MAGIC);
        assert_eq!(buf[4], 2);
        assert_eq!(buf[5], 2);
        let (rd, rs, dt) = read_tsr(&mut buf.as_slice()).unwrap();
        assert_eq!(rd, data);
        assert_eq!(rs, shape);
        assert_eq!(dt, Dtype::F64);
    }

    #[test]
    fn f32_widens() {
        let data = vec![0.5, -1.5];
        let mut buf = Vec::new();
        write_tsr(&mut buf, &data, &[2], Dtype::F32).unwrap();
        let (rd, rs, dt) = read_tsr(&mut buf.as_slice()).unwrap();
        assert_eq!(rd, data);
        assert_eq!(rs, vec![2]);
        assert_eq!(dt, Dtype::F32);
    }

    #[test]
    fn truncation_is_corrupt() {
        let mut buf = Vec::new();
        write_tsr(&mut buf, &[1.0, 2.0, 3.0], &[3], Dtype::F64).unwrap();
        buf.truncate(buf.len() - 5);
        match read_tsr(&mut buf.as_slice()) {
            Err(Error::CorruptFile(_)) => {}
            other => panic!("expected corrupt-file error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let buf = b"NOPE\x02\x01\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(read_tsr(&mut buf.as_slice()), Err(Error::CorruptFile(_))));
    }
}
