//! Versioned binary container for named tensors plus JSON metadata.
//!
//! Layout (little-endian): `"DASR"`, u16 version, u8 kind, u32 metadata
//! length, metadata JSON, u32 tensor count, then per tensor: u16 name length,
//! UTF-8 name, u8 rank, u64 per dimension, f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DASR";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Dim = 1,
    Cb = 2,
}

impl TryFrom<u8> for ModelKind {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(ModelKind::Dim),
            2 => Ok(ModelKind::Cb),
            other => Err(Error::Format(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    /// Serialized JSON, kept verbatim so that load→save is byte-identical.
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor named {name:?}")))
    }

    /// Bytes of parameter payload (4 per value).
    pub fn parameter_bytes(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel() * 4).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind as u8])?;
        let meta = self.metadata.as_bytes();
        w.write_all(
            &u32::try_from(meta.len())
                .map_err(|_| Error::Format("metadata too large".into()))?
                .to_le_bytes(),
        )?;
        w.write_all(meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(nb)?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Format("tensor rank exceeds 255".into()))?;
            w.write_all(&[rank])?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            let mut payload = Vec::with_capacity(t.numel() * 4);
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&payload)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::try_from(read_array::<1>(r)?[0])?;
        let meta_len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let metadata = String::from_utf8(meta).map_err(|e| Error::Format(e.to_string()))?;
        let count = u32::from_le_bytes(read_array(r)?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let rank = read_array::<1>(r)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(read_array(r)?) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut payload = vec![0u8; numel * 4];
            r.read_exact(&mut payload)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Checkpoint {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Cb,
            metadata: r#"{"scale":4}"#.into(),
            tensors: vec![
                (
                    "head.weight".into(),
                    Tensor::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0),
                ),
                (
                    "head.bias".into(),
                    Tensor::new(&[2], vec![f32::MIN_POSITIVE, -0.0]).unwrap(),
                ),
            ],
        }
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes().unwrap();
        assert_eq!(&b[..4], b"DASR");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(b[6], 2);
        assert_eq!(u32::from_le_bytes([b[7], b[8], b[9], b[10]]), 11);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let b = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.to_bytes().unwrap(), b);
        assert_eq!(back.parameter_bytes(), (18 + 2) * 4);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut b = sample().to_bytes().unwrap();
        b[6] = 9;
        assert!(Checkpoint::from_bytes(&b).is_err());
        let b = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
