//! Auto-scaling touch keyboard: 24 keys, each a scale degree.

use serde::{Deserialize, Serialize};

use super::{Command, InstrumentError, NoteTracker, Output, SensorPayload};
use crate::event::{EngineEvent, InstrumentId};
use crate::theory::{degree_to_midi, MusicalContext};

pub const KEY_COUNT: u32 = 24;
pub const BUTTON_CYCLE_SCALE: u32 = 0;
pub const BUTTON_CYCLE_PRESET: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TouchSynthParams {
    pub base_octave: i32,
    pub velocity: u8,
}

impl Default for TouchSynthParams {
    fn default() -> Self {
        TouchSynthParams {
            base_octave: 3,
            velocity: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TouchSynth {
    pub id: InstrumentId,
    params: TouchSynthParams,
    /// Pitch each held key started, so a release survives a context change.
    held: [Option<u8>; KEY_COUNT as usize],
    notes: NoteTracker,
}

impl TouchSynth {
    pub fn new(id: InstrumentId, params: TouchSynthParams) -> Self {
        TouchSynth {
            id,
            params,
            held: [None; KEY_COUNT as usize],
            notes: NoteTracker::default(),
        }
    }

    pub fn handle(&mut self, payload: &SensorPayload, now: u64, ctx: &MusicalContext) -> Result<Output, InstrumentError> {
        let mut out = Output::default();
        match *payload {
            SensorPayload::TouchKey { index, on } => {
                if index >= KEY_COUNT {
                    return Err(InstrumentError::KeyIndex(index));
                }
                let slot = &mut self.held[index as usize];
                match (on, *slot) {
                    (true, None) => {
                        let pitch = degree_to_midi(index as i32, self.params.base_octave, ctx);
                        *slot = Some(pitch);
                        if self.notes.press(pitch) {
                            out.events.push(EngineEvent::note_on(&self.id, now, pitch, self.params.velocity));
                        }
                    }
                    (false, Some(pitch)) => {
                        *slot = None;
                        if self.notes.release(pitch) {
                            out.events.push(EngineEvent::note_off(&self.id, now, pitch));
                        }
                    }
                    // repeated down or stray up
                    _ => {}
                }
            }
            SensorPayload::Button { id, pressed } => {
                let command = match id {
                    BUTTON_CYCLE_SCALE => Command::CycleScale,
                    BUTTON_CYCLE_PRESET => Command::CyclePreset,
                    other => return Err(InstrumentError::Button(other)),
                };
                if pressed {
                    out.commands.push((self.id.clone(), command));
                }
            }
            _ => unreachable!("payload class checked by Instrument::handle"),
        }
        Ok(out)
    }

    pub fn release_all(&mut self, now: u64) -> Output {
        self.held = [None; KEY_COUNT as usize];
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventKind;
    use crate::instruments::Instrument;
    use crate::theory::{PitchClass, ScaleTable};

    fn ctx() -> MusicalContext {
        MusicalContext::new(PitchClass::C, ScaleTable::shipped().get(0).unwrap().clone(), 120.0).unwrap()
    }

    fn model() -> Instrument {
        Instrument::TouchSynth(TouchSynth::new("touch1".into(), TouchSynthParams::default()))
    }

    fn key(index: u32, on: bool) -> SensorPayload {
        SensorPayload::TouchKey { index, on }
    }

    #[test]
    fn key_zero_is_root_of_octave_three_and_sustains() {
        let mut m = model();
        let c = ctx();
        let out = m.handle(&key(0, true), 10, &c).unwrap();
        assert_eq!(out.events[0].kind, EventKind::NoteOn { pitch: 48, velocity: 100 });
        assert!(m.handle(&key(0, true), 20, &c).unwrap().is_empty());
        let out = m.handle(&key(0, false), 30, &c).unwrap();
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 48 });
    }

    #[test]
    fn key_seven_is_an_octave_up() {
        let mut m = model();
        let out = m.handle(&key(7, true), 0, &ctx()).unwrap();
        assert_eq!(out.events[0].kind, EventKind::NoteOn { pitch: 60, velocity: 100 });
    }

    #[test]
    fn out_of_range_key_rejected() {
        assert_eq!(m_err(key(24, true)), InstrumentError::KeyIndex(24));
        assert_eq!(m_err(SensorPayload::Button { id: 5, pressed: true }), InstrumentError::Button(5));
    }

    fn m_err(p: SensorPayload) -> InstrumentError {
        model().handle(&p, 0, &ctx()).unwrap_err()
    }

    #[test]
    fn buttons_cycle_scale_and_preset() {
        let mut m = model();
        let out = m.handle(&SensorPayload::Button { id: 0, pressed: true }, 0, &ctx()).unwrap();
        assert_eq!(out.commands[0].1, Command::CycleScale);
        let out = m.handle(&SensorPayload::Button { id: 1, pressed: true }, 0, &ctx()).unwrap();
        assert_eq!(out.commands[0].1, Command::CyclePreset);
        assert!(m.handle(&SensorPayload::Button { id: 1, pressed: false }, 0, &ctx()).unwrap().is_empty());
    }

    #[test]
    fn release_uses_the_pitch_that_started() {
        let mut m = model();
        let table = ScaleTable::shipped();
        m.handle(&key(2, true), 0, &ctx()).unwrap();
        let minor = MusicalContext::new(PitchClass::C, table.get(1).unwrap().clone(), 120.0).unwrap();
        let out = m.handle(&key(2, false), 5, &minor).unwrap();
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 52 });
    }
}
