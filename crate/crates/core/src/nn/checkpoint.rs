//! Binary parameter container.
//!
//! Layout: magic `LATO`, format version (u32 LE), then one record per
//! parameter: name length (u32), UTF-8 name, rank (u32), dims (u64 each),
//! raw little-endian f64 values.

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"LATO";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub values: Vec<f64>,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.element_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    for p in store.iter() {
        out.extend((p.name.len() as u32).to_le_bytes());
        out.extend(p.name.as_bytes());
        out.extend(2u32.to_le_bytes());
        out.extend((p.value.rows() as u64).to_le_bytes());
        out.extend((p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>, NnError> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(NnError::Format("missing LATO magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut records = Vec::new();
    while cur.at < bytes.len() {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| NnError::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(NnError::Format(format!(
                "parameter `{name}` has rank {rank}"
            )));
        }
        let dims = (0..rank)
            .map(|_| cur.u64())
            .collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(|| NnError::Format(format!("parameter `{name}` is too large")))?;
        let raw = cur.take(
            count
                .checked_mul(8)
                .ok_or_else(|| NnError::Format("overflow".into()))?,
        )?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok(records)
}

/// Copies checkpoint values into `store`, requiring identical names and shapes.
pub fn load_into(store: &mut ParamStore, bytes: &[u8]) -> Result<(), NnError> {
    let records = decode(bytes)?;
    if records.len() != store.len() {
        return Err(NnError::Incompatible(format!(
            "checkpoint holds {} parameters, model expects {}",
            records.len(),
            store.len()
        )));
    }
    for rec in records {
        let id = store
            .id(&rec.name)
            .ok_or_else(|| NnError::Incompatible(format!("unexpected parameter `{}`", rec.name)))?;
        let p = store.get_mut(id);
        let expected = vec![p.value.rows() as u64, p.value.cols() as u64];
        let dims = if rec.dims.len() == 2 {
            rec.dims.clone()
        } else {
            vec![1, rec.dims.iter().product()]
        };
        if dims != expected {
            return Err(NnError::Incompatible(format!(
                "parameter `{}` has shape {:?} in checkpoint but {:?} in model",
                rec.name, rec.dims, expected
            )));
        }
        p.value = Tensor::from_vec(p.value.rows(), p.value.cols(), rec.values);
    }
    Ok(())
}
