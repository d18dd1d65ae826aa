use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::patching::{PatchPair, PATCH_SIZE};

pub const STORE_MAGIC: &[u8; 4] = b"DPS1";

/// A patch pair with its difficulty class (1..=5).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub pair: PatchPair,
    pub class: u8,
}

/// Writes `"DPS1"` followed by one u32-length-prefixed record per patch:
/// u16 id length, UTF-8 id, u32 row, u32 col, u8 class, 48×48 LR f32, (48s)² HR f32.
pub fn write_store(w: &mut impl Write, patches: &[LabeledPatch]) -> Result<()> {
    w.write_all(STORE_MAGIC)?;
    for p in patches {
        if p.pair.lr.dims() != (PATCH_SIZE, PATCH_SIZE) {
            return Err(Error::dim(format!(
                "store records need 48×48 LR patches, got {:?}",
                p.pair.lr.dims()
            )));
        }
        p.pair.scale()?;
        let id = p.pair.source.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::Format("image id too long".into()))?;
        let mut rec = Vec::with_capacity(11 + id.len() + 4 * (p.pair.lr.data().len() + p.pair.hr.data().len()));
        rec.extend_from_slice(&id_len.to_le_bytes());
        rec.extend_from_slice(id);
        rec.extend_from_slice(&p.pair.row.to_le_bytes());
        rec.extend_from_slice(&p.pair.col.to_le_bytes());
        rec.push(p.class);
        for v in p.pair.lr.data().iter().chain(p.pair.hr.data()) {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&(rec.len() as u32).to_le_bytes())?;
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_store(r: &mut impl Read) -> Result<Vec<LabeledPatch>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STORE_MAGIC {
        return Err(Error::Format(format!("not a patch store (magic {magic:?})")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => r.read_exact(&mut len[1..])?,
        }
        let mut rec = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut rec)?;
        out.push(parse_record(&rec)?);
    }
    Ok(out)
}

fn parse_record(rec: &[u8]) -> Result<LabeledPatch> {
    let short = || Error::Format("truncated patch record".into());
    let id_len = u16::from_le_bytes(rec.get(..2).ok_or_else(short)?.try_into().unwrap()) as usize;
    let mut at = 2;
    let id = std::str::from_utf8(rec.get(at..at + id_len).ok_or_else(short)?)
        .map_err(|e| Error::Format(e.to_string()))?
        .to_string();
    at += id_len;
    let fixed = rec.get(at..at + 9).ok_or_else(short)?;
    let row = u32::from_le_bytes(fixed[..4].try_into().unwrap());
    let col = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    let class = fixed[8];
    at += 9;
    let floats: Vec<f32> = rec[at..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let lr_len = PATCH_SIZE * PATCH_SIZE;
    let hr_len = floats.len().checked_sub(lr_len).ok_or_else(short)?;
    let hr_side = (hr_len as f64).sqrt().round() as usize;
    if hr_side * hr_side != hr_len
        || !hr_side.is_multiple_of(PATCH_SIZE)
        || hr_side == 0
        || !(rec.len() - at).is_multiple_of(4)
    {
        return Err(Error::Format(format!(
            "HR payload of {hr_len} samples is not a square patch"
        )));
    }
    if !(1..=5).contains(&class) {
        return Err(Error::Format(format!("class {class} out of range")));
    }
    Ok(LabeledPatch {
        pair: PatchPair {
            lr: Plane::new(PATCH_SIZE, PATCH_SIZE, floats[..lr_len].to_vec())?,
            hr: Plane::new(hr_side, hr_side, floats[lr_len..].to_vec())?,
            source: id,
            row,
            col,
        },
        class,
    })
}

pub fn save_store(path: &Path, patches: &[LabeledPatch]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_store(&mut w, patches)?;
    w.flush()?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<Vec<LabeledPatch>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_store(&mut std::io::BufReader::new(f))
}
