//! MIDI 1.0 byte stream parsing and mapping onto engine events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::{Controller, EngineEvent, InstrumentId};
use crate::theory::{quantize_to_scale, MusicalContext};

/// Filter cutoff (sound controller 5, "brightness").
pub const CC_CUTOFF: u8 = 74;
/// Effects 1 depth, conventionally reverb.
pub const CC_REVERB: u8 = 91;
pub const CC_ALL_NOTES_OFF: u8 = 123;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidiKind {
    NoteOn,
    NoteOff,
    ControlChange,
    PitchBend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MidiMessage {
    pub kind: MidiKind,
    pub channel: u8,
    pub data1: u8,
    pub data2: u8,
}

impl MidiMessage {
    /// 14-bit pitch bend value, centre 8192.
    pub fn bend(&self) -> u16 {
        ((self.data2 as u16) << 7) | self.data1 as u16
    }

    /// Canonical wire bytes (always with a status byte).
    pub fn to_bytes(&self) -> [u8; 3] {
        let hi = match self.kind {
            MidiKind::NoteOff => 0x80,
            MidiKind::NoteOn => 0x90,
            MidiKind::ControlChange => 0xB0,
            MidiKind::PitchBend => 0xE0,
        };
        [hi | (self.channel & 0x0F), self.data1 & 0x7F, self.data2 & 0x7F]
    }
}

/// Streaming parser. Bytes may arrive split across calls at any point.
#[derive(Debug, Clone, Default)]
pub struct MidiParser {
    running: Option<u8>,
    data: [u8; 2],
    have: usize,
    in_sysex: bool,
    /// Data bytes still to discard for an unsupported system common message.
    skip: usize,
}

/// Data bytes following a status byte.
fn data_len(status: u8) -> usize {
    match status & 0xF0 {
        0xC0 | 0xD0 => 1,
        0x80..=0xE0 => 2,
        _ => match status {
            0xF1 | 0xF3 => 1,
            0xF2 => 2,
            _ => 0,
        },
    }
}

impl MidiParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8], out: &mut Vec<MidiMessage>) {
        for &b in bytes {
            if let Some(m) = self.push(b) {
                out.push(m);
            }
        }
    }

    pub fn push(&mut self, b: u8) -> Option<MidiMessage> {
        if b >= 0xF8 {
            // realtime: may appear anywhere, touches no state
            return None;
        }
        if b & 0x80 != 0 {
            self.have = 0;
            self.in_sysex = b == 0xF0;
            if b >= 0xF0 {
                self.running = None;
                self.skip = data_len(b);
            } else {
                self.running = Some(b);
                self.skip = 0;
            }
            return None;
        }
        if self.in_sysex {
            return None;
        }
        if self.skip > 0 {
            self.skip -= 1;
            return None;
        }
        let status = self.running?;
        self.data[self.have] = b;
        self.have += 1;
        if self.have < data_len(status) {
            return None;
        }
        self.have = 0;
        let channel = status & 0x0F;
        let (d1, d2) = (self.data[0], self.data[1]);
        let kind = match status & 0xF0 {
            0x80 => MidiKind::NoteOff,
            0x90 if d2 == 0 => MidiKind::NoteOff,
            0x90 => MidiKind::NoteOn,
            0xB0 => MidiKind::ControlChange,
            0xE0 => MidiKind::PitchBend,
            _ => return None,
        };
        Some(MidiMessage {
            kind,
            channel,
            data1: d1,
            data2: d2,
        })
    }
}

pub fn parse(bytes: &[u8]) -> Vec<MidiMessage> {
    let mut out = Vec::new();
    MidiParser::new().feed(bytes, &mut out);
    out
}

/// Turns MIDI from a note/CC controller into scale-locked events for one
/// instrument.
#[derive(Debug, Clone)]
pub struct MidiMapper {
    pub id: InstrumentId,
    /// Channel to listen on, `None` for omni.
    pub channel: Option<u8>,
    /// Incoming key to the quantized pitch it started.
    held: BTreeMap<(u8, u8), u8>,
    sounding: BTreeMap<u8, u32>,
}

impl MidiMapper {
    pub fn new(id: InstrumentId, channel: Option<u8>) -> Self {
        MidiMapper {
            id,
            channel,
            held: BTreeMap::new(),
            sounding: BTreeMap::new(),
        }
    }

    pub fn map(&mut self, msg: &MidiMessage, now: u64, ctx: &MusicalContext) -> Vec<EngineEvent> {
        if self.channel.is_some_and(|c| c != msg.channel) {
            return Vec::new();
        }
        let mut out = Vec::new();
        match msg.kind {
            MidiKind::NoteOn => {
                let key = (msg.channel, msg.data1);
                if self.held.contains_key(&key) {
                    self.off(key, now, &mut out);
                }
                let pitch = quantize_to_scale(msg.data1, ctx);
                self.held.insert(key, pitch);
                let n = self.sounding.entry(pitch).or_insert(0);
                *n += 1;
                if *n > 1 {
                    out.push(EngineEvent::note_off(&self.id, now, pitch));
                }
                out.push(EngineEvent::note_on(&self.id, now, pitch, msg.data2));
            }
            MidiKind::NoteOff => self.off((msg.channel, msg.data1), now, &mut out),
            MidiKind::ControlChange => {
                let v = msg.data2 as f32 / 127.0;
                match msg.data1 {
                    CC_CUTOFF => out.push(EngineEvent::control(&self.id, now, Controller::FilterCutoff, v)),
                    CC_REVERB => out.push(EngineEvent::control(&self.id, now, Controller::ReverbSend, v)),
                    CC_ALL_NOTES_OFF => out.extend(self.release_all(now)),
                    _ => {}
                }
            }
            // a synth-wide glide would drag every held voice to one pitch
            MidiKind::PitchBend => {}
        }
        out
    }

    fn off(&mut self, key: (u8, u8), now: u64, out: &mut Vec<EngineEvent>) {
        let Some(pitch) = self.held.remove(&key) else {
            return;
        };
        let n = self.sounding.get_mut(&pitch).expect("held pitch is sounding");
        *n -= 1;
        if *n == 0 {
            self.sounding.remove(&pitch);
            out.push(EngineEvent::note_off(&self.id, now, pitch));
        }
    }

    pub fn release_all(&mut self, now: u64) -> Vec<EngineEvent> {
        self.held.clear();
        std::mem::take(&mut self.sounding)
            .into_keys()
            .map(|p| EngineEvent::note_off(&self.id, now, p))
            .collect()
    }
}
