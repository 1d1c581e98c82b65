//! Rotation-detecting headband: yaw steps through the scale, nodding sets the
//! reverb send and tilting the head sideways adds a diatonic harmony.

use serde::{Deserialize, Serialize};

use super::{NoteTracker, Output, SensorPayload};
use crate::event::{Controller, EngineEvent, InstrumentId};
use crate::theory::{degree_to_midi, diatonic_harmony, MusicalContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadbandParams {
    /// Yaw at which the degree range is exhausted, degrees.
    pub yaw_span: f32,
    /// Scale degrees reached at `±yaw_span`.
    pub degree_span: i32,
    /// Head pitch covering the whole reverb range, `±` degrees.
    pub reverb_span: f32,
    /// Roll beyond which the harmony sounds.
    pub harmony_on: f32,
    /// Roll has to fall this far back below `harmony_on` to release it.
    pub hysteresis: f32,
    pub octave: i32,
    pub velocity: u8,
}

impl Default for HeadbandParams {
    fn default() -> Self {
        HeadbandParams {
            yaw_span: 60.0,
            degree_span: 7,
            reverb_span: 30.0,
            harmony_on: 25.0,
            hysteresis: 5.0,
            octave: 4,
            velocity: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Headband {
    pub id: InstrumentId,
    params: HeadbandParams,
    degree: Option<i32>,
    base: Option<u8>,
    harmony: Option<u8>,
    harmony_engaged: bool,
    reverb: Option<f32>,
    notes: NoteTracker,
}

impl Headband {
    pub fn new(id: InstrumentId, params: HeadbandParams) -> Self {
        Headband {
            id,
            params,
            degree: None,
            base: None,
            harmony: None,
            harmony_engaged: false,
            reverb: None,
            notes: NoteTracker::default(),
        }
    }

    /// Scale degree for a yaw angle: linear, rounded, clamped.
    pub fn yaw_to_degree(&self, yaw: f32) -> i32 {
        let span = self.params.degree_span;
        let d = (yaw / self.params.yaw_span * span as f32).round() as i32;
        d.clamp(-span, span)
    }

    pub fn pitch_to_reverb(&self, pitch: f32) -> f32 {
        let s = self.params.reverb_span;
        ((pitch + s) / (2.0 * s)).clamp(0.0, 1.0)
    }

    pub fn harmony_engaged(&self) -> bool {
        self.harmony_engaged
    }

    pub fn sounding(&self) -> Option<u8> {
        self.base
    }

    fn on(&mut self, out: &mut Output, now: u64, pitch: u8) {
        if self.notes.press(pitch) {
            out.events.push(EngineEvent::note_on(&self.id, now, pitch, self.params.velocity));
        }
    }

    fn off(&mut self, out: &mut Output, now: u64, pitch: u8) {
        if self.notes.release(pitch) {
            out.events.push(EngineEvent::note_off(&self.id, now, pitch));
        }
    }

    fn start_harmony(&mut self, out: &mut Output, now: u64, ctx: &MusicalContext) {
        if let Some(base) = self.base {
            let h = diatonic_harmony(base, ctx);
            if h != base {
                self.harmony = Some(h);
                self.on(out, now, h);
            }
        }
    }

    fn stop_harmony(&mut self, out: &mut Output, now: u64) {
        if let Some(h) = self.harmony.take() {
            self.off(out, now, h);
        }
    }

    pub fn handle(&mut self, payload: &SensorPayload, now: u64, ctx: &MusicalContext) -> Output {
        let SensorPayload::Orientation { yaw, pitch, roll } = *payload else {
            unreachable!("payload class checked by Instrument::handle");
        };
        let mut out = Output::default();

        let degree = self.yaw_to_degree(yaw);
        if self.degree != Some(degree) {
            self.stop_harmony(&mut out, now);
            if let Some(old) = self.base.take() {
                self.off(&mut out, now, old);
            }
            let note = degree_to_midi(degree, self.params.octave, ctx);
            self.on(&mut out, now, note);
            self.base = Some(note);
            self.degree = Some(degree);
            if self.harmony_engaged {
                self.start_harmony(&mut out, now, ctx);
            }
        }

        let tilt = roll.abs();
        if !self.harmony_engaged && tilt >= self.params.harmony_on {
            self.harmony_engaged = true;
            self.start_harmony(&mut out, now, ctx);
        } else if self.harmony_engaged && tilt < self.params.harmony_on - self.params.hysteresis {
            self.harmony_engaged = false;
            self.stop_harmony(&mut out, now);
        }

        let send = self.pitch_to_reverb(pitch);
        if self.reverb != Some(send) {
            self.reverb = Some(send);
            out.events.push(EngineEvent::control(&self.id, now, Controller::ReverbSend, send));
        }
        out
    }

    pub fn release_all(&mut self, now: u64) -> Output {
        self.degree = None;
        self.base = None;
        self.harmony = None;
        self.harmony_engaged = false;
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
    use crate::theory::{PitchClass, ScaleTable};

    fn ctx() -> MusicalContext {
        MusicalContext::new(PitchClass::C, ScaleTable::shipped().get(0).unwrap().clone(), 120.0).unwrap()
    }

    fn head() -> Headband {
        Headband::new("head".into(), HeadbandParams::default())
    }

    fn orient(yaw: f32, pitch: f32, roll: f32) -> SensorPayload {
        SensorPayload::orientation(yaw, pitch, roll)
    }

    fn note_ons(out: &Output) -> Vec<u8> {
        out.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::NoteOn { pitch, .. } => Some(pitch),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn centre_sounds_the_root() {
        let mut h = head();
        let out = h.handle(&orient(0.0, 0.0, 0.0), 0, &ctx());
        assert_eq!(note_ons(&out), vec![60]);
        // reverb at mid position
        assert!(out
            .events
            .iter()
            .any(|e| e.kind == EventKind::Control { controller: Controller::ReverbSend, value: 0.5 }));
    }

    #[test]
    fn full_right_is_seven_degrees() {
        let h = head();
        assert_eq!(h.yaw_to_degree(60.0), 7);
        assert_eq!(h.yaw_to_degree(90.0), 7);
        assert_eq!(h.yaw_to_degree(-60.0), -7);
        let mut h = head();
        let out = h.handle(&orient(60.0, 0.0, 0.0), 0, &ctx());
        assert_eq!(note_ons(&out), vec![72]);
    }

    #[test]
    fn degree_change_moves_the_note() {
        let mut h = head();
        h.handle(&orient(0.0, 0.0, 0.0), 0, &ctx());
        let out = h.handle(&orient(9.0, 0.0, 0.0), 10, &ctx());
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 60 });
        assert_eq!(out.events[1].kind, EventKind::NoteOn { pitch: 62, velocity: 100 });
        // same degree: nothing new
        assert!(note_ons(&h.handle(&orient(8.0, 0.0, 0.0), 20, &ctx())).is_empty());
    }

    #[test]
    fn harmony_hysteresis() {
        let mut h = head();
        let c = ctx();
        h.handle(&orient(0.0, 0.0, 0.0), 0, &c);
        let out = h.handle(&orient(0.0, 0.0, 30.0), 1, &c);
        assert_eq!(note_ons(&out), vec![64]);
        assert!(h.harmony_engaged());
        let out = h.handle(&orient(0.0, 0.0, 22.0), 2, &c);
        assert!(out.events.iter().all(|e| !matches!(e.kind, EventKind::NoteOff { .. })));
        assert!(h.harmony_engaged());
        let out = h.handle(&orient(0.0, 0.0, 19.0), 3, &c);
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 64 });
        assert!(!h.harmony_engaged());
        // left tilt works the same way
        let out = h.handle(&orient(0.0, 0.0, -26.0), 4, &c);
        assert_eq!(note_ons(&out), vec![64]);
    }

    #[test]
    fn harmony_follows_degree_changes() {
        let mut h = head();
        let c = ctx();
        h.handle(&orient(0.0, 0.0, 30.0), 0, &c);
        let out = h.handle(&orient(9.0, 0.0, 30.0), 1, &c);
        assert_eq!(note_ons(&out), vec![62, 65]);
    }

    #[test]
    fn reverb_from_head_pitch() {
        let h = head();
        assert_eq!(h.pitch_to_reverb(-30.0), 0.0);
        assert_eq!(h.pitch_to_reverb(30.0), 1.0);
        assert_eq!(h.pitch_to_reverb(45.0), 1.0);
        assert_eq!(h.pitch_to_reverb(15.0), 0.75);
    }

    #[test]
    fn degree_is_monotone_in_yaw() {
        let h = head();
        let degrees: Vec<i32> = (-900..=900).map(|y| h.yaw_to_degree(y as f32 / 10.0)).collect();
        assert!(degrees.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(degrees.first(), Some(&-7));
        assert_eq!(degrees.last(), Some(&7));
    }
}
