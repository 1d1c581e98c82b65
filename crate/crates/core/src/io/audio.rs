//! Audio output contract for the live engine.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::thread;
use std::time::{Duration, Instant};

use super::wav::{to_i16, WavError, WavSpec, WavWriter};

/// Receives interleaved stereo blocks from the render loop.
pub trait AudioSink: Send {
    fn write(&mut self, interleaved: &[f32]) -> io::Result<()>;

    fn finish(self: Box<Self>) -> io::Result<()> {
        Ok(())
    }
}

/// Raw signed 16-bit little-endian PCM, e.g. piped into `aplay -f S16_LE`.
pub struct RawSink<W: Write + Send> {
    out: W,
    buf: Vec<u8>,
}

impl<W: Write + Send> RawSink<W> {
    pub fn new(out: W) -> Self {
        RawSink { out, buf: Vec::new() }
    }
}

impl<W: Write + Send> AudioSink for RawSink<W> {
    fn write(&mut self, interleaved: &[f32]) -> io::Result<()> {
        self.buf.clear();
        self.buf.extend(interleaved.iter().flat_map(|&x| to_i16(x).to_le_bytes()));
        self.out.write_all(&self.buf)
    }

    fn finish(mut self: Box<Self>) -> io::Result<()> {
        self.out.flush()
    }
}

pub struct WavSink {
    writer: WavWriter<BufWriter<File>>,
}

impl WavSink {
    pub fn create(path: &std::path::Path, spec: WavSpec) -> Result<Self, WavError> {
        Ok(WavSink {
            writer: WavWriter::create(path, spec)?,
        })
    }
}

fn wav_io(e: WavError) -> io::Error {
    match e {
        WavError::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, other.to_string()),
    }
}

impl AudioSink for WavSink {
    fn write(&mut self, interleaved: &[f32]) -> io::Result<()> {
        self.writer.write(interleaved).map_err(wav_io)
    }

    fn finish(self: Box<Self>) -> io::Result<()> {
        self.writer.finish().map(|_| ()).map_err(wav_io)
    }
}

/// Discards audio.
#[derive(Debug, Default)]
pub struct NullSink;

impl AudioSink for NullSink {
    fn write(&mut self, _: &[f32]) -> io::Result<()> {
        Ok(())
    }
}

/// Holds each write back until the wall clock has caught up with the audio
/// written so far, so a sink that never blocks plays at real-time rate.
pub struct Paced<S: AudioSink> {
    inner: S,
    sample_rate: u32,
    frames: u64,
    start: Option<Instant>,
}

impl<S: AudioSink> Paced<S> {
    pub fn new(inner: S, sample_rate: u32) -> Self {
        Paced {
            inner,
            sample_rate,
            frames: 0,
            start: None,
        }
    }
}

impl<S: AudioSink> AudioSink for Paced<S> {
    fn write(&mut self, interleaved: &[f32]) -> io::Result<()> {
        let start = *self.start.get_or_insert_with(Instant::now);
        let due = Duration::from_secs_f64(self.frames as f64 / self.sample_rate as f64);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            thread::sleep(wait);
        }
        self.frames += (interleaved.len() / 2) as u64;
        self.inner.write(interleaved)
    }

    fn finish(self: Box<Self>) -> io::Result<()> {
        Box::new(self.inner).finish()
    }
}
