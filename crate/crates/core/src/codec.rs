//! Little-endian binary framing shared by `index.lsfs`, `versions.lsfs` and
//! `index.journal`.
//!
//! Snapshot layout:
//!
//! ```text
//! magic[4] | format u16 | dim u32 | count u64 | crc32 u32 | body
//! body = count x (len u32 | record[len])
//! ```
//!
//! The CRC covers the body. Journal layout is a plain sequence of
//! `len u32 | crc32 u32 | record[len]`; a torn tail is dropped on replay.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::clock::from_millis;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8 + 4;

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(u8::from(v))
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn opt_str(&mut self, s: Option<&str>) -> &mut Self {
        match s {
            Some(s) => self.u8(1).str(s),
            None => self.u8(0),
        }
    }

    pub fn time(&mut self, t: DateTime<Utc>) -> &mut Self {
        self.i64(t.timestamp_millis())
    }

    pub fn f32s(&mut self, values: &[f32]) -> &mut Self {
        self.u32(values.len() as u32);
        for v in values {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn strs(&mut self, values: &[String]) -> &mut Self {
        self.u32(values.len() as u32);
        for v in values {
            self.str(v);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn short(what: &str) -> Error {
    Error::CorruptSnapshot(format!("record truncated while reading {what}"))
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| short(what))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "u8")?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, "i64")?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::CorruptSnapshot(format!("bad bool byte {b}"))),
        }
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len, "string")?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::CorruptSnapshot("string is not UTF-8".into()))
    }

    pub fn opt_str(&mut self) -> Result<Option<String>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.str()?)),
            b => Err(Error::CorruptSnapshot(format!("bad option tag {b}"))),
        }
    }

    pub fn time(&mut self) -> Result<DateTime<Utc>> {
        Ok(from_millis(self.i64()?))
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        let bytes = self.take(len.checked_mul(4).ok_or_else(|| short("f32s"))?, "f32s")?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap()))).collect())
    }

    pub fn strs(&mut self) -> Result<Vec<String>> {
        let len = self.u32()? as usize;
        (0..len).map(|_| self.str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Write a snapshot atomically (temp file + rename).
pub fn write_snapshot(path: &Path, magic: &[u8; 4], dim: u32, records: &[Vec<u8>]) -> Result<()> {
    let mut body = Vec::new();
    for r in records {
        body.extend_from_slice(&(r.len() as u32).to_le_bytes());
        body.extend_from_slice(r);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Snapshot {
    pub dim: u32,
    pub records: Vec<Vec<u8>>,
}

/// Read a snapshot; a zero-length file is an empty snapshot.
pub fn read_snapshot(path: &Path, magic: &[u8; 4]) -> Result<Snapshot> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Ok(Snapshot { dim: 0, records: Vec::new() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptSnapshot("header truncated".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::CorruptSnapshot("bad magic".into()));
    }
    let mut d = Decoder::new(&bytes[4..HEADER_LEN]);
    let format = u16::from_le_bytes([d.u8()?, d.u8()?]);
    if format != FORMAT_VERSION {
        return Err(Error::CorruptSnapshot(format!("unsupported format version {format}")));
    }
    let dim = d.u32()?;
    let count = d.u64()?;
    let crc = d.u32()?;
    let body = &bytes[HEADER_LEN..];
    if crc32fast::hash(body) != crc {
        return Err(Error::CorruptSnapshot("checksum mismatch".into()));
    }
    let mut d = Decoder::new(body);
    let mut records = Vec::new();
    for _ in 0..count {
        let len = d.u32()? as usize;
        records.push(d.take(len, "record")?.to_vec());
    }
    if !d.is_empty() {
        return Err(Error::CorruptSnapshot("trailing bytes after last record".into()));
    }
    Ok(Snapshot { dim, records })
}

/// Append-only mutation log.
#[derive(Debug)]
pub struct Journal {
    file: File,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, record: &[u8]) -> Result<()> {
        let mut frame = Vec::with_capacity(8 + record.len());
        frame.extend_from_slice(&(record.len() as u32).to_le_bytes());
        frame.extend_from_slice(&crc32fast::hash(record).to_le_bytes());
        frame.extend_from_slice(record);
        self.file.write_all(&frame)?;
        self.file.flush()?;
        Ok(())
    }

    pub fn truncate(&mut self) -> Result<()> {
        self.file.set_len(0)?;
        Ok(())
    }
}

/// Every intact journal record, in order. Stops at the first torn or
/// checksum-failing frame.
pub fn read_journal(path: &Path) -> Result<Vec<Vec<u8>>> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos + 8 <= bytes.len() {
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let Some(end) = (pos + 8).checked_add(len).filter(|&e| e <= bytes.len()) else {
            log::warn!("journal {}: dropping torn tail at byte {pos}", path.display());
            break;
        };
        let record = &bytes[pos + 8..end];
        if crc32fast::hash(record) != crc {
            log::warn!("journal {}: checksum mismatch at byte {pos}, ignoring rest", path.display());
            break;
        }
        out.push(record.to_vec());
        pos = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lsfs");
        let records = vec![b"one".to_vec(), Vec::new(), b"three".to_vec()];
        write_snapshot(&path, b"TEST", 7, &records).unwrap();
        let snap = read_snapshot(&path, b"TEST").unwrap();
        assert_eq!(snap.dim, 7);
        assert_eq!(snap.records, records);

        assert!(matches!(read_snapshot(&path, b"NOPE"), Err(Error::CorruptSnapshot(_))));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_snapshot(&path, b"TEST"), Err(Error::CorruptSnapshot(_))));

        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 0xff;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(read_snapshot(&path, b"TEST"), Err(Error::CorruptSnapshot(_))));
    }

    #[test]
    fn journal_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j");
        let mut j = Journal::open(&path).unwrap();
        j.append(b"a").unwrap();
        j.append(b"bb").unwrap();
        drop(j);
        let mut raw = fs::read(&path).unwrap();
        raw.extend_from_slice(&[9, 0, 0, 0, 1, 2]);
        fs::write(&path, raw).unwrap();
        assert_eq!(read_journal(&path).unwrap(), vec![b"a".to_vec(), b"bb".to_vec()]);
        assert!(read_journal(&dir.path().join("missing")).unwrap().is_empty());
    }

    #[test]
    fn decoder_reports_truncation() {
        let mut e = Encoder::new();
        e.str("hello").f32s(&[1.0, -0.5]);
        let bytes = e.finish();
        let mut d = Decoder::new(&bytes);
        assert_eq!(d.str().unwrap(), "hello");
        assert_eq!(d.f32s().unwrap(), vec![1.0, -0.5]);
        let mut d = Decoder::new(&bytes[..6]);
        assert!(d.str().is_err());
    }
}
