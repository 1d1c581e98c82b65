//! The five instrument models: state machines turning sensor frames into
//! engine events and commands.

pub mod handheld;
pub mod harp;
pub mod headband;
pub mod pads;
pub mod touch;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EngineEvent, InstrumentId};
use crate::sequencer::PadMode;
use crate::theory::MusicalContext;

pub use handheld::{Handheld, HandheldParams};
pub use harp::{AirHarp, AirHarpParams, GridLayout};
pub use headband::{Headband, HeadbandParams};
pub use pads::{DrumPads, DrumPadsParams};
pub use touch::{TouchSynth, TouchSynthParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstrumentError {
    #[error("unknown instrument {0:?}")]
    UnknownInstrument(String),
    #[error("instrument {instrument} ({kind:?}) does not accept {payload} frames")]
    PayloadMismatch {
        instrument: String,
        kind: InstrumentKind,
        payload: &'static str,
    },
    #[error("key index {0} outside 0..24")]
    KeyIndex(u32),
    #[error("pad index {0} outside 0..4")]
    PadIndex(u32),
    #[error("button {0} has no function on this instrument")]
    Button(u32),
    #[error("grid point ({x}, {y}) outside the unit square")]
    Coordinates { x: f32, y: f32 },
    #[error("{field} = {value} outside [0, 1]")]
    Range { field: &'static str, value: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    TouchSynth,
    DrumPads,
    Headband,
    Handheld,
    AirHarp,
}

impl InstrumentKind {
    pub const ALL: [InstrumentKind; 5] = [
        InstrumentKind::TouchSynth,
        InstrumentKind::DrumPads,
        InstrumentKind::Headband,
        InstrumentKind::Handheld,
        InstrumentKind::AirHarp,
    ];

    /// Whether a payload belongs to this instrument's sensor class.
    pub fn accepts(self, payload: &SensorPayload) -> bool {
        use SensorPayload::*;
        match (self, payload) {
            (_, Release) => true,
            (InstrumentKind::TouchSynth, TouchKey { .. } | Button { .. }) => true,
            (InstrumentKind::DrumPads, PadPressure { .. } | Strip { .. } | Button { .. }) => true,
            (InstrumentKind::Headband | InstrumentKind::Handheld, Orientation { .. }) => true,
            (InstrumentKind::AirHarp, GridPoint { .. }) => true,
            _ => false,
        }
    }
}

/// Wrap an angle in degrees into [-180, 180].
pub fn normalize_angle(deg: f32) -> f32 {
    if !deg.is_finite() {
        return 0.0;
    }
    let wrapped = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped == -180.0 && deg > 0.0 {
        180.0
    } else {
        wrapped
    }
}

/// Raw input from one controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorPayload {
    TouchKey { index: u32, on: bool },
    PadPressure { pad: u32, pressure: f32 },
    Strip { position: f32 },
    /// Degrees, each in [-180, 180].
    Orientation { yaw: f32, pitch: f32, roll: f32 },
    /// Unit-square coordinates, `y = 0` at the bottom.
    GridPoint { x: f32, y: f32, body: u32 },
    Button { id: u32, pressed: bool },
    /// Release everything the instrument is sounding.
    Release,
}

impl SensorPayload {
    pub fn name(&self) -> &'static str {
        match self {
            SensorPayload::TouchKey { .. } => "key",
            SensorPayload::PadPressure { .. } => "pad",
            SensorPayload::Strip { .. } => "strip",
            SensorPayload::Orientation { .. } => "orient",
            SensorPayload::GridPoint { .. } => "grid",
            SensorPayload::Button { .. } => "button",
            SensorPayload::Release => "release",
        }
    }

    pub fn orientation(yaw: f32, pitch: f32, roll: f32) -> Self {
        SensorPayload::Orientation {
            yaw: normalize_angle(yaw),
            pitch: normalize_angle(pitch),
            roll: normalize_angle(roll),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub instrument: InstrumentId,
    pub payload: SensorPayload,
}

impl SensorFrame {
    pub fn new(instrument: impl Into<InstrumentId>, payload: SensorPayload) -> Self {
        SensorFrame {
            instrument: instrument.into(),
            payload,
        }
    }
}

impl From<String> for InstrumentId {
    fn from(s: String) -> Self {
        InstrumentId::new(&s)
    }
}

/// Non-note effects of a frame, applied by the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    CycleScale,
    CyclePreset,
    PadHit { track: usize, pressure: f32, mode: PadMode },
    SetTempo(f64),
    ToggleDryWet,
    ToggleTransport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub events: Vec<EngineEvent>,
    pub commands: Vec<(InstrumentId, Command)>,
}

impl Output {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.commands.is_empty()
    }

    pub fn extend(&mut self, other: Output) {
        self.events.extend(other.events);
        self.commands.extend(other.commands);
    }
}

/// Reference-counted note state for one source, so every emitted note_on
/// gets exactly one note_off even when two inputs land on the same pitch.
#[derive(Debug, Clone, Default)]
pub struct NoteTracker {
    held: BTreeMap<u8, u32>,
}

impl NoteTracker {
    /// Returns true when this press starts the pitch sounding.
    pub fn press(&mut self, pitch: u8) -> bool {
        let n = self.held.entry(pitch).or_insert(0);
        *n += 1;
        *n == 1
    }

    /// Returns true when this release silences the pitch.
    pub fn release(&mut self, pitch: u8) -> bool {
        match self.held.get_mut(&pitch) {
            Some(n) if *n > 1 => {
                *n -= 1;
                false
            }
            Some(_) => {
                self.held.remove(&pitch);
                true
            }
            None => false,
        }
    }

    pub fn is_sounding(&self, pitch: u8) -> bool {
        self.held.contains_key(&pitch)
    }

    /// Drain every sounding pitch.
    pub fn release_all(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.held).into_keys().collect()
    }

    pub fn sounding(&self) -> impl Iterator<Item = u8> + '_ {
        self.held.keys().copied()
    }
}

/// Milliseconds to sample frames.
pub(crate) fn ms_to_frames(ms: f64, sample_rate: u32) -> u64 {
    (ms * sample_rate as f64 / 1000.0).round() as u64
}

/// A configured instrument model.
#[derive(Debug, Clone)]
pub enum Instrument {
    TouchSynth(TouchSynth),
    DrumPads(DrumPads),
    Headband(Headband),
    Handheld(Handheld),
    AirHarp(AirHarp),
}

impl Instrument {
    pub fn id(&self) -> &InstrumentId {
        match self {
            Instrument::TouchSynth(m) => &m.id,
            Instrument::DrumPads(m) => &m.id,
            Instrument::Headband(m) => &m.id,
            Instrument::Handheld(m) => &m.id,
            Instrument::AirHarp(m) => &m.id,
        }
    }

    pub fn kind(&self) -> InstrumentKind {
        match self {
            Instrument::TouchSynth(_) => InstrumentKind::TouchSynth,
            Instrument::DrumPads(_) => InstrumentKind::DrumPads,
            Instrument::Headband(_) => InstrumentKind::Headband,
            Instrument::Handheld(_) => InstrumentKind::Handheld,
            Instrument::AirHarp(_) => InstrumentKind::AirHarp,
        }
    }

    /// Map one frame at time `now` (frames since engine start).
    pub fn handle(&mut self, payload: &SensorPayload, now: u64, ctx: &MusicalContext) -> Result<Output, InstrumentError> {
        if !self.kind().accepts(payload) {
            return Err(InstrumentError::PayloadMismatch {
                instrument: self.id().to_string(),
                kind: self.kind(),
                payload: payload.name(),
            });
        }
        if let SensorPayload::Release = payload {
            return Ok(self.release_all(now));
        }
        match self {
            Instrument::TouchSynth(m) => m.handle(payload, now, ctx),
            Instrument::DrumPads(m) => m.handle(payload),
            Instrument::Headband(m) => Ok(m.handle(payload, now, ctx)),
            Instrument::Handheld(m) => Ok(m.handle(payload, now, ctx)),
            Instrument::AirHarp(m) => m.handle(payload, now, ctx),
        }
    }

    /// Emit time-driven events due at or before `now`.
    pub fn tick(&mut self, now: u64) -> Output {
        match self {
            Instrument::AirHarp(m) => m.tick(now),
            _ => Output::default(),
        }
    }

    pub fn release_all(&mut self, now: u64) -> Output {
        match self {
            Instrument::TouchSynth(m) => m.release_all(now),
            Instrument::DrumPads(_) => Output::default(),
            Instrument::Headband(m) => m.release_all(now),
            Instrument::Handheld(m) => m.release_all(now),
            Instrument::AirHarp(m) => m.release_all(now),
        }
    }
}
