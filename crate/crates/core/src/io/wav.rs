//! RIFF/WAVE PCM16 little-endian writing and header parsing.

use std::fs::File;
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

pub const HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("channels must be 1 or 2, got {0}")]
    Channels(u16),
    #[error("{samples} samples do not fill whole {channels}-channel frames")]
    Shape { samples: usize, channels: u16 },
    #[error("not a PCM16 WAVE header: {0}")]
    Header(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate: u32,
    pub channels: u16,
}

impl WavSpec {
    pub fn new(sample_rate: u32, channels: u16) -> Result<Self, WavError> {
        if !(1..=2).contains(&channels) {
            return Err(WavError::Channels(channels));
        }
        Ok(WavSpec { sample_rate, channels })
    }

    fn block_align(&self) -> u16 {
        self.channels * 2
    }
}

/// Float sample to int16, hard-clipped; +1.0 maps to 32767.
pub fn to_i16(x: f32) -> i16 {
    if x.is_nan() {
        return 0;
    }
    (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn header(spec: WavSpec, data_len: u32) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    let mut w = &mut h[..];
    let byte_rate = spec.sample_rate * spec.block_align() as u32;
    w.write_all(b"RIFF").unwrap();
    w.write_all(&(36 + data_len).to_le_bytes()).unwrap();
    w.write_all(b"WAVEfmt ").unwrap();
    w.write_all(&16u32.to_le_bytes()).unwrap();
    w.write_all(&1u16.to_le_bytes()).unwrap();
    w.write_all(&spec.channels.to_le_bytes()).unwrap();
    w.write_all(&spec.sample_rate.to_le_bytes()).unwrap();
    w.write_all(&byte_rate.to_le_bytes()).unwrap();
    w.write_all(&spec.block_align().to_le_bytes()).unwrap();
    w.write_all(&16u16.to_le_bytes()).unwrap();
    w.write_all(b"data").unwrap();
    w.write_all(&data_len.to_le_bytes()).unwrap();
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavHeader {
    pub spec: WavSpec,
    pub riff_len: u32,
    pub byte_rate: u32,
    pub block_align: u16,
    pub data_len: u32,
}

impl WavHeader {
    /// Parse the canonical 44-byte header this module writes.
    pub fn parse(bytes: &[u8]) -> Result<Self, WavError> {
        if bytes.len() < HEADER_LEN {
            return Err(WavError::Header("shorter than 44 bytes"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        if &bytes[0..4] != b"RIFF" || &bytes[8..16] != b"WAVEfmt " || &bytes[36..40] != b"data" {
            return Err(WavError::Header("missing RIFF/WAVE/fmt/data tags"));
        }
        if u32_at(16) != 16 || u16_at(20) != 1 || u16_at(34) != 16 {
            return Err(WavError::Header("not 16-bit PCM"));
        }
        Ok(WavHeader {
            spec: WavSpec::new(u32_at(24), u16_at(22))?,
            riff_len: u32_at(4),
            byte_rate: u32_at(28),
            block_align: u16_at(32),
            data_len: u32_at(40),
        })
    }
}

/// Streaming writer; lengths are patched in on [`finish`](Self::finish).
#[derive(Debug)]
pub struct WavWriter<W: Write + Seek> {
    out: W,
    spec: WavSpec,
    data_len: u64,
    buf: Vec<u8>,
}

impl WavWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, spec: WavSpec) -> Result<Self, WavError> {
        WavWriter::new(BufWriter::new(File::create(path)?), spec)
    }
}

impl<W: Write + Seek> WavWriter<W> {
    pub fn new(mut out: W, spec: WavSpec) -> Result<Self, WavError> {
        out.write_all(&header(spec, 0))?;
        Ok(WavWriter {
            out,
            spec,
            data_len: 0,
            buf: Vec::new(),
        })
    }

    pub fn spec(&self) -> WavSpec {
        self.spec
    }

    /// Interleaved samples, whole frames only.
    pub fn write(&mut self, samples: &[f32]) -> Result<(), WavError> {
        if samples.len() % self.spec.channels as usize != 0 {
            return Err(WavError::Shape {
                samples: samples.len(),
                channels: self.spec.channels,
            });
        }
        self.buf.clear();
        self.buf.extend(samples.iter().flat_map(|&x| to_i16(x).to_le_bytes()));
        self.out.write_all(&self.buf)?;
        self.data_len += self.buf.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, WavError> {
        let len = u32::try_from(self.data_len).map_err(|_| WavError::Header("data exceeds 4 GiB"))?;
        self.out.seek(SeekFrom::Start(0))?;
        self.out.write_all(&header(self.spec, len))?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Whole file in memory.
pub fn encode(spec: WavSpec, samples: &[f32]) -> Result<Vec<u8>, WavError> {
    let mut w = WavWriter::new(io::Cursor::new(Vec::new()), spec)?;
    w.write(samples)?;
    Ok(w.finish()?.into_inner())
}

pub fn write_file(path: impl AsRef<Path>, spec: WavSpec, samples: &[f32]) -> Result<(), WavError> {
    let mut w = WavWriter::create(path, spec)?;
    w.write(samples)?;
    w.finish()?;
    Ok(())
}
