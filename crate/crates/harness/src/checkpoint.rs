//! Checkpoint container: magic `QGN1`, a little-endian u32 tensor count,
//! then per tensor a u16 name length, the UTF-8 name, a u8 rank, u32 dims
//! and 32-bit little-endian float values. Integer and byte state travels in
//! the same framing, as raw float bit patterns.

use std::fs;
use std::path::Path;

use crate::image::write_all;
use crate::{HarnessError, Result};

pub const MAGIC: &[u8; 3] = b"QGN";
pub const VERSION: u8 = b'1';

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

fn missing(name: &str) -> HarnessError {
    HarnessError::Config(format!("checkpoint has no tensor `{name}`"))
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn push_u32s(&mut self, name: impl Into<String>, words: &[u32]) {
        self.push(name, &[words.len()], words.iter().map(|w| f32::from_bits(*w)).collect());
    }

    pub fn push_u64(&mut self, name: impl Into<String>, v: u64) {
        self.push_u32s(name, &[v as u32, (v >> 32) as u32]);
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.push(name, &[bytes.len()], bytes.iter().map(|&b| b as f32).collect());
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| missing(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn get_u32s(&self, name: &str) -> Result<Vec<u32>> {
        Ok(self.get(name)?.data.iter().map(|v| v.to_bits()).collect())
    }

    pub fn get_u64(&self, name: &str) -> Result<u64> {
        match self.get_u32s(name)?[..] {
            [lo, hi] => Ok(lo as u64 | (hi as u64) << 32),
            _ => Err(HarnessError::Config(format!("`{name}` is not a u64"))),
        }
    }

    pub fn get_bytes(&self, name: &str) -> Result<Vec<u8>> {
        Ok(self.get(name)?.data.iter().map(|&v| v as u8).collect())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.data.len() || t.shape.len() > u8::MAX as usize || t.name.len() > u16::MAX as usize {
                return Err(HarnessError::Config(format!("tensor `{}` cannot be framed", t.name)));
            }
            out.extend((t.name.len() as u16).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend((d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend(v.to_bits().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if &magic[..3] != MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        if magic[3] != VERSION {
            return Err(r.err(3, &format!("unsupported version {:?}", magic[3] as char)));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| r.err(at, "name is not UTF-8"))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.err(r.pos, "size overflow"))?;
            let at = r.pos;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| r.err(at, "size overflow"))?, "values")?;
            let data = payload
                .chunks(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_all(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| HarnessError::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, msg: &str) -> HarnessError {
        HarnessError::Parse {
            what: "checkpoint",
            offset,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.bytes.len(), &format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("w", &[2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, -0.0, 1e-30]);
        c.push("scalar", &[], vec![7.0]);
        c.push_u64("iter", u64::MAX - 5);
        c.push_u32s("bits", &[0x7fc0_0001, 0xffff_ffff, 0]);
        c.push_bytes("json", b"{\"a\":1}");
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.get_u64("iter").unwrap(), u64::MAX - 5);
        assert_eq!(back.get_u32s("bits").unwrap(), vec![0x7fc0_0001, 0xffff_ffff, 0]);
        assert_eq!(back.get_bytes("json").unwrap(), b"{\"a\":1}");
        assert_eq!(back.get("w").unwrap().data[4].to_bits(), (-0.0f32).to_bits());
        assert!(back.get("nope").is_err());
    }

    #[test]
    fn layout_matches_the_format() {
        let mut c = Checkpoint::new();
        c.push("ab", &[2], vec![1.0, 2.0]);
        let b = c.encode().unwrap();
        assert_eq!(&b[..4], b"QGN1");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..10], &2u16.to_le_bytes());
        assert_eq!(&b[10..12], b"ab");
        assert_eq!(b[12], 1);
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(&b[17..21], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = sample().encode().unwrap();
        for cut in [0, 3, 7, 20, bytes.len() - 1] {
            match Checkpoint::decode(&bytes[..cut]) {
                Err(HarnessError::Parse { offset, .. }) => assert_eq!(offset, cut, "cut {cut}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bad),
            Err(HarnessError::Parse { offset: 0, .. })
        ));
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(
            Checkpoint::decode(&bad),
            Err(HarnessError::Parse { offset: 3, .. })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
    }
}
