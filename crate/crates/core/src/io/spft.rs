//! Named-tensor container, little-endian throughout.
//!
//! ```text
//! "SPFT"  u32 version  u32 count
//! count × { u32 name_len, name (UTF-8), u8 dtype, u8 rank, rank × u64 dim, payload }
//! ```
//! dtype: 0 = f32, 1 = f64, 2 = i32, 3 = u8.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPFT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl EntryData {
    pub fn dtype(&self) -> u8 {
        match self {
            EntryData::F32(_) => 0,
            EntryData::F64(_) => 1,
            EntryData::I32(_) => 2,
            EntryData::U8(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::I32(v) => v.len(),
            EntryData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elem_size(dtype: u8) -> Option<usize> {
        match dtype {
            0 => Some(4),
            1 => Some(8),
            2 => Some(4),
            3 => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: EntryData,
}

/// Ordered, uniquely named entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: EntryData) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::InvalidConfig {
                field: "entry",
                reason: format!("duplicate entry `{name}`"),
            });
        }
        if dims.len() > u8::MAX as usize || dims.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                op: "container_insert",
                shape: dims,
                reason: format!("{} elements", data.len()),
            });
        }
        self.entries.push(Entry { name, dims, data });
        Ok(())
    }

    pub fn insert_f32(&mut self, name: impl Into<String>, t: &Tensor<f32>) -> Result<()> {
        self.insert(name, t.shape().to_vec(), EntryData::F32(t.data().to_vec()))
    }

    pub fn insert_f64(&mut self, name: impl Into<String>, t: &Tensor<f64>) -> Result<()> {
        self.insert(name, t.shape().to_vec(), EntryData::F64(t.data().to_vec()))
    }

    pub fn insert_text(&mut self, name: impl Into<String>, text: &str) -> Result<()> {
        let b = text.as_bytes().to_vec();
        self.insert(name, vec![b.len()], EntryData::U8(b))
    }

    fn need(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn tensor_f32(&self, name: &str) -> Result<Tensor<f32>> {
        match self.need(name)? {
            Entry {
                dims,
                data: EntryData::F32(v),
                ..
            } => Tensor::new(dims.clone(), v.clone()),
            e => Err(Error::CheckpointMismatch(format!("entry `{name}` has dtype {}", e.data.dtype()))),
        }
    }

    pub fn tensor_f64(&self, name: &str) -> Result<Tensor<f64>> {
        match self.need(name)? {
            Entry {
                dims,
                data: EntryData::F64(v),
                ..
            } => Tensor::new(dims.clone(), v.clone()),
            e => Err(Error::CheckpointMismatch(format!("entry `{name}` has dtype {}", e.data.dtype()))),
        }
    }

    pub fn text(&self, name: &str) -> Result<String> {
        match self.need(name)? {
            Entry {
                data: EntryData::U8(v), ..
            } => String::from_utf8(v.clone())
                .map_err(|e| Error::CheckpointMismatch(format!("entry `{name}` is not UTF-8: {e}"))),
            e => Err(Error::CheckpointMismatch(format!("entry `{name}` has dtype {}", e.data.dtype()))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                EntryData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                EntryData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "missing SPFT magic".into(),
            });
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: at,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let at = r.pos;
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Format {
                    offset: at + 4,
                    reason: "entry name is not UTF-8".into(),
                })?
                .to_string();
            let at_dtype = r.pos;
            let dtype = r.take(1)?[0];
            let size = EntryData::elem_size(dtype).ok_or_else(|| Error::Format {
                offset: at_dtype,
                reason: format!("unknown dtype {dtype}"),
            })?;
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let at = r.pos;
                let d = usize::try_from(r.u64()?).map_err(|_| Error::Format {
                    offset: at,
                    reason: "dimension overflows".into(),
                })?;
                dims.push(d);
            }
            let at_payload = r.pos;
            let bytes = dims
                .iter()
                .try_fold(size, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format {
                    offset: at_payload,
                    reason: "payload size overflows".into(),
                })?;
            let p = r.take(bytes)?;
            let data = match dtype {
                0 => EntryData::F32(p.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()),
                1 => EntryData::F64(p.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()),
                2 => EntryData::I32(p.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect()),
                _ => EntryData::U8(p.to_vec()),
            };
            if c.get(&name).is_some() {
                return Err(Error::Format {
                    offset: at,
                    reason: format!("duplicate entry `{name}`"),
                });
            }
            c.entries.push(Entry { name, dims, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Format {
                offset: r.pos,
                reason: "trailing bytes after last entry".into(),
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format {
                offset: self.buf.len(),
                reason: format!("truncated: need {n} bytes at {}", self.pos),
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let mut c = Container::new();
        c.insert("ab", vec![2], EntryData::I32(vec![1, -1])).unwrap();
        let b = c.encode();
        let mut want = b"SPFT".to_vec();
        want.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, b'a', b'b', 2, 1]);
        want.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0]);
        want.extend_from_slice(&[1, 0, 0, 0, 0xff, 0xff, 0xff, 0xff]);
        assert_eq!(b, want);
        assert_eq!(Container::decode(&b).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Container::new();
        c.insert_text("cfg", "{}").unwrap();
        assert!(c.insert_text("cfg", "x").is_err());
        assert!(c.insert("bad", vec![3], EntryData::U8(vec![0; 2])).is_err());
        let b = c.encode();
        assert!(matches!(Container::decode(&b[..b.len() - 1]), Err(Error::Format { .. })));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(Container::decode(&extra), Err(Error::Format { offset, .. }) if offset == b.len()));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Container::decode(&bad), Err(Error::Format { offset: 0, .. })));
        let mut dt = b.clone();
        dt[4 + 4 + 4 + 4 + 3] = 9;
        assert!(matches!(Container::decode(&dt), Err(Error::Format { offset: 19, .. })));
        let mut dup = c.clone();
        dup.entries.push(dup.entries[0].clone());
        assert!(Container::decode(&dup.encode()).is_err());
    }

    fn entry() -> impl Strategy<Value = (Vec<usize>, EntryData)> {
        (prop::collection::vec(0usize..4, 0..4), 0u8..4, any::<u64>()).prop_map(|(dims, dt, seed)| {
            let n: usize = dims.iter().product();
            let mut x = seed;
            let mut next = || {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                x
            };
            let data = match dt {
                0 => EntryData::F32((0..n).map(|_| f32::from_bits(next() as u32)).collect()),
                1 => EntryData::F64((0..n).map(|_| f64::from_bits(next())).collect()),
                2 => EntryData::I32((0..n).map(|_| next() as i32).collect()),
                _ => EntryData::U8((0..n).map(|_| next() as u8).collect()),
            };
            (dims, data)
        })
    }

    fn bits(c: &Container) -> Vec<u8> {
        c.encode()
    }

    proptest! {
        #[test]
        fn bitwise_round_trip(es in prop::collection::vec(entry(), 0..5)) {
            let mut c = Container::new();
            for (i, (d, e)) in es.into_iter().enumerate() {
                c.insert(format!("e{i}.ß"), d, e).unwrap();
            }
            let back = Container::decode(&c.encode()).unwrap();
            prop_assert_eq!(bits(&back), bits(&c));
            prop_assert_eq!(back.entries().len(), c.entries().len());
        }
    }
}
