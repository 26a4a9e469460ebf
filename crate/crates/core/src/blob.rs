//! Tensor blob files: 8-byte magic `MMVAEBLB`, dtype code, rank, `rank`
//! little-endian `u32` dimensions, then row-major little-endian data.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MMVAEBLB";

#[derive(Clone, Debug, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl BlobData {
    fn code(&self) -> u8 {
        match self {
            BlobData::F32(_) => 1,
            BlobData::U16(_) => 2,
            BlobData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::U16(v) => v.len(),
            BlobData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: BlobData,
}

impl Blob {
    pub fn new(shape: Vec<usize>, data: BlobData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        if shape.len() > u8::MAX as usize || shape.iter().any(|d| *d > u32::MAX as usize) {
            return Err(Error::Format(format!("shape {shape:?} is not representable")));
        }
        Ok(Self { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.shape.len() as u8);
        for d in &self.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        match &self.data {
            BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated blob".into());
        if bytes.len() < 10 {
            return Err(short());
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let code = bytes[8];
        let rank = bytes[9] as usize;
        let header = 10 + 4 * rank;
        if bytes.len() < header {
            return Err(short());
        }
        let shape: Vec<usize> = bytes[10..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let body = &bytes[header..];
        let width = match code {
            1 => 4,
            2 => 2,
            3 => 1,
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        };
        if body.len() != n * width {
            return Err(Error::Format(format!("expected {} data bytes, found {}", n * width, body.len())));
        }
        let data = match code {
            1 => BlobData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
            2 => BlobData::U16(body.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().expect("2"))).collect()),
            _ => BlobData::U8(body.to_vec()),
        };
        Ok(Self { shape, data })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let b = Blob::new(vec![2, 1], BlobData::U16(vec![1, 258])).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], b"MMVAEBLB");
        assert_eq!(bytes[8], 2);
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..18], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[18..], &[1, 0, 2, 1]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(Blob::new(vec![3], BlobData::U8(vec![1, 2])).is_err());
        let good = Blob::new(vec![2], BlobData::F32(vec![1.0, 2.0])).unwrap().to_bytes();
        assert!(Blob::from_bytes(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(Blob::from_bytes(&bad).is_err());
        let mut bad = good;
        bad[8] = 9;
        assert!(Blob::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..5, cols in 1usize..5, seed in any::<u32>(), code in 1u8..4) {
            let n = rows * cols;
            let data = match code {
                1 => BlobData::F32((0..n).map(|i| (i as f32 + seed as f32) * 0.37).collect()),
                2 => BlobData::U16((0..n).map(|i| (i as u32 ^ seed) as u16).collect()),
                _ => BlobData::U8((0..n).map(|i| (i as u32 ^ seed) as u8).collect()),
            };
            let b = Blob::new(vec![rows, cols], data).unwrap();
            prop_assert_eq!(Blob::from_bytes(&b.to_bytes()).unwrap(), b);
        }
    }
}
