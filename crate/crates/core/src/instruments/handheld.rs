//! Handheld 9-DOF controller: tilt forward/back glides the pitch, tilt
//! left/right sweeps the filter. Heading (yaw) is read but not mapped.

use serde::{Deserialize, Serialize};

use super::{NoteTracker, Output, SensorPayload};
use crate::event::{Controller, EngineEvent, InstrumentId};
use crate::theory::{degree_to_midi, MusicalContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandheldParams {
    /// Tilt reaching the ends of each range, `±` degrees.
    pub tilt_span: f32,
    /// Tilt treated as level, `±` degrees.
    pub dead_zone: f32,
    pub octave: i32,
    pub velocity: u8,
}

impl Default for HandheldParams {
    fn default() -> Self {
        HandheldParams {
            tilt_span: 45.0,
            dead_zone: 3.0,
            octave: 4,
            velocity: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Handheld {
    pub id: InstrumentId,
    params: HandheldParams,
    glide: Option<f32>,
    cutoff: Option<f32>,
    notes: NoteTracker,
}

impl Handheld {
    pub fn new(id: InstrumentId, params: HandheldParams) -> Self {
        Handheld {
            id,
            params,
            glide: None,
            cutoff: None,
            notes: NoteTracker::default(),
        }
    }

    /// Map a tilt angle onto 0..1 with 0.5 at level and a dead zone around it.
    pub fn tilt_to_unit(&self, angle: f32) -> f32 {
        let dz = self.params.dead_zone;
        let mag = angle.abs();
        if mag <= dz {
            return 0.5;
        }
        let t = ((mag - dz) / (self.params.tilt_span - dz)).min(1.0);
        0.5 + 0.5 * t.copysign(angle)
    }

    pub fn handle(&mut self, payload: &SensorPayload, now: u64, ctx: &MusicalContext) -> Output {
        let SensorPayload::Orientation { pitch, roll, .. } = *payload else {
            unreachable!("payload class checked by Instrument::handle");
        };
        let mut out = Output::default();
        let glide = self.tilt_to_unit(pitch);
        if self.glide != Some(glide) {
            self.glide = Some(glide);
            out.events.push(EngineEvent::glide(&self.id, now, glide));
        }
        let root = degree_to_midi(0, self.params.octave, ctx);
        if self.notes.sounding().next().is_none() && self.notes.press(root) {
            out.events.push(EngineEvent::note_on(&self.id, now, root, self.params.velocity));
        }
        let cutoff = self.tilt_to_unit(roll);
        if self.cutoff != Some(cutoff) {
            self.cutoff = Some(cutoff);
            out.events.push(EngineEvent::control(&self.id, now, Controller::FilterCutoff, cutoff));
        }
        out
    }

    pub fn release_all(&mut self, now: u64) -> Output {
        self.glide = None;
        self.cutoff = None;
        Output {
            events: self
                .notes
                .release_all()
                .into_iter()
                .map(|p| EngineEvent::note_off(&self.id, now, p))
                .collect(),
            commands: Vec::new(),
        }
    }
}
