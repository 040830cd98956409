//! Little-endian primitives for the binary artifact formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

/// Upper bound for a null-terminated id.
const MAX_ID_LEN: usize = 64 * 1024;

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, vs: &[f32]) -> io::Result<()> {
        for v in vs {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn cstr(&mut self, s: &str) -> Result<()> {
        if s.as_bytes().contains(&0) {
            return Err(Error::invalid(format!("id {s:?} contains a NUL byte")));
        }
        self.inner.write_all(s.as_bytes())?;
        self.inner.write_all(&[0])?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reader that tracks the byte offset for error messages.
pub(crate) struct Reader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::format(
                        self.offset + read as u64,
                        format!("truncated input: needed {} more bytes", buf.len() - read),
                    ))
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Checks a 4-byte magic; short or wrong input reports "bad magic".
    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        let mut read = 0;
        while read < 4 {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => break,
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if read < 4 || &buf != expected {
            return Err(Error::format(
                0,
                format!("bad magic: expected {:?}", String::from_utf8_lossy(expected)),
            ));
        }
        self.offset = 4;
        Ok(())
    }

    pub fn version(&mut self, supported: u32) -> Result<u32> {
        let at = self.offset;
        let v = self.u32()?;
        if v != supported {
            return Err(Error::format(
                at,
                format!("unsupported format version {v} (expected {supported})"),
            ));
        }
        Ok(v)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32s_into(&mut self, out: &mut Vec<f32>, n: usize) -> Result<()> {
        let mut buf = vec![0u8; n * 4];
        self.fill(&mut buf)?;
        out.extend(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        Ok(())
    }

    pub fn cstr(&mut self) -> Result<String> {
        let start = self.offset;
        let mut bytes = Vec::new();
        loop {
            let b = self.u8()?;
            if b == 0 {
                break;
            }
            bytes.push(b);
            if bytes.len() > MAX_ID_LEN {
                return Err(Error::format(start, "id exceeds maximum length"));
            }
        }
        String::from_utf8(bytes).map_err(|_| Error::format(start, "id is not valid UTF-8"))
    }

    /// Errors if any bytes remain.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::format(self.offset, "trailing bytes after payload")),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

pub(crate) fn checked_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}
