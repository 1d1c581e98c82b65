//! Normalized musical events flowing from instrument models to the renderer.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Identifier of an instrument as named in the engine config ("touch1", "pads", ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstrumentId(Arc<str>);

impl InstrumentId {
    pub fn new(id: &str) -> Self {
        InstrumentId(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for InstrumentId {
    fn from(s: &str) -> Self {
        InstrumentId::new(s)
    }
}

/// Continuous controls an instrument can drive on its sound generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    ReverbSend,
    FilterCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    Control { controller: Controller, value: f32 },
    /// Continuous, unquantized pitch position in 0..=1.
    PitchGlide { value: f32 },
}

/// A timestamped musical event. `timestamp` counts sample frames since engine start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub source: InstrumentId,
    pub timestamp: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EngineEvent {
    pub fn note_on(source: &InstrumentId, timestamp: u64, pitch: u8, velocity: u8) -> Self {
        EngineEvent {
            source: source.clone(),
            timestamp,
            kind: EventKind::NoteOn {
                pitch: pitch.min(127),
                velocity: velocity.min(127),
            },
        }
    }

    pub fn note_off(source: &InstrumentId, timestamp: u64, pitch: u8) -> Self {
        EngineEvent {
            source: source.clone(),
            timestamp,
            kind: EventKind::NoteOff { pitch: pitch.min(127) },
        }
    }

    pub fn control(source: &InstrumentId, timestamp: u64, controller: Controller, value: f32) -> Self {
        EngineEvent {
            source: source.clone(),
            timestamp,
            kind: EventKind::Control {
                controller,
                value: value.clamp(0.0, 1.0),
            },
        }
    }

    pub fn glide(source: &InstrumentId, timestamp: u64, value: f32) -> Self {
        EngineEvent {
            source: source.clone(),
            timestamp,
            kind: EventKind::PitchGlide {
                value: value.clamp(0.0, 1.0),
            },
        }
    }
}
