//! Little-endian byte-level helpers for the binary containers. Both the index
//! (`TKIX`) and store (`TKPS`) files end with an FNV-1a checksum over all
//! preceding bytes so that any single-byte corruption is detected at load.

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

pub(crate) fn put_u8(buf: &mut Vec<u8>, v: u8) {
    buf.push(v);
}

pub(crate) fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

/// Appends the checksum trailer to a fully serialized payload.
pub(crate) fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let sum = fnv1a64(&buf);
    put_u64(&mut buf, sum);
    buf
}

pub(crate) const CHECKSUM_LEN: usize = 8;

/// Sequential reader over a sealed payload. Construction verifies the
/// checksum; every accessor bounds-checks and reports truncation.
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn open(data: &'a [u8], what: &str) -> Result<Self> {
        if data.len() < CHECKSUM_LEN {
            return Err(Error::Format(format!("{what}: file too short")));
        }
        let (payload, trailer) = data.split_at(data.len() - CHECKSUM_LEN);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        if fnv1a64(payload) != stored {
            return Err(Error::Format(format!("{what}: checksum mismatch (corrupt file)")));
        }
        Ok(Reader { data: payload, pos: 0 })
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        let got = self.bytes(4)?;
        if got != magic {
            return Err(Error::Format(format!("{what}: bad magic")));
        }
        Ok(())
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!("{what}: trailing bytes after payload")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_primitives() {
        let mut buf = Vec::new();
        put_u8(&mut buf, 7);
        put_u16(&mut buf, 300);
        put_u32(&mut buf, 70_000);
        put_u64(&mut buf, u64::MAX - 1);
        put_f64(&mut buf, 0.25);
        put_str(&mut buf, "abc");
        let sealed = seal(buf);

        let mut r = Reader::open(&sealed, "test").unwrap();
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u16().unwrap(), 300);
        assert_eq!(r.u32().unwrap(), 70_000);
        assert_eq!(r.u64().unwrap(), u64::MAX - 1);
        assert_eq!(r.f64().unwrap(), 0.25);
        assert_eq!(r.str().unwrap(), "abc");
        r.finish("test").unwrap();
    }

    #[test]
    fn any_flipped_byte_fails_open() {
        let sealed = seal(vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        for i in 0..sealed.len() {
            let mut corrupt = sealed.clone();
            corrupt[i] ^= 0x01;
            assert!(Reader::open(&corrupt, "test").is_err(), "flip at {i} undetected");
        }
    }

    #[test]
    fn truncation_is_reported() {
        let sealed = seal(vec![1, 2, 3]);
        assert!(Reader::open(&sealed[..sealed.len() - 1], "test").is_err());
        let mut r = Reader::open(&sealed, "test").unwrap();
        r.u16().unwrap();
        assert!(r.u32().is_err());
    }
}
