//! Four-track, sixteen-step drum sequencer with sample-accurate transport.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DrumKind;

pub const TRACKS: usize = 4;
pub const STEPS: usize = 16;

/// Touch-strip tempo range, BPM.
pub const STRIP_TEMPO_MIN: f64 = 60.0;
pub const STRIP_TEMPO_MAX: f64 = 180.0;

/// Pressure-depth low-pass range: `cutoff = BASE + pressure * SPAN`.
pub const PRESSURE_CUTOFF_BASE: f32 = 400.0;
pub const PRESSURE_CUTOFF_SPAN: f32 = 7600.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequencerError {
    #[error("track {0} outside 0..4")]
    Track(usize),
    #[error("pattern must have 4 tracks of 16 steps")]
    Shape,
    #[error("step pressure {0} outside [0, 1]")]
    Pressure(f32),
    #[error("pattern json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Step {
    #[serde(rename = "on")]
    pub active: bool,
    #[serde(rename = "p")]
    pub pressure: f32,
}

/// 4 tracks x 16 steps; serialized as `{"tracks":[[{"on":true,"p":0.4}, ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "PatternJson", into = "PatternJson")]
pub struct StepPattern {
    tracks: [[Step; STEPS]; TRACKS],
}

#[derive(Serialize, Deserialize)]
struct PatternJson {
    tracks: Vec<Vec<Step>>,
}

impl StepPattern {
    pub fn get(&self, track: usize, step: usize) -> Step {
        self.tracks[track][step % STEPS]
    }

    pub fn set(&mut self, track: usize, step: usize, value: Step) -> Result<(), SequencerError> {
        if track >= TRACKS {
            return Err(SequencerError::Track(track));
        }
        if !(0.0..=1.0).contains(&value.pressure) {
            return Err(SequencerError::Pressure(value.pressure));
        }
        self.tracks[track][step % STEPS] = value;
        Ok(())
    }

    pub fn clear(&mut self) {
        *self = StepPattern::default();
    }

    pub fn active_count(&self) -> usize {
        self.tracks.iter().flatten().filter(|s| s.active).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pattern serializes")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("pattern serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SequencerError> {
        let doc: PatternJson = serde_json::from_str(text).map_err(|e| SequencerError::Json(e.to_string()))?;
        StepPattern::try_from(doc)
    }
}

impl TryFrom<PatternJson> for StepPattern {
    type Error = SequencerError;

    fn try_from(doc: PatternJson) -> Result<Self, Self::Error> {
        if doc.tracks.len() != TRACKS || doc.tracks.iter().any(|t| t.len() != STEPS) {
            return Err(SequencerError::Shape);
        }
        let mut p = StepPattern::default();
        for (t, track) in doc.tracks.iter().enumerate() {
            for (s, step) in track.iter().enumerate() {
                p.set(t, s, *step)?;
            }
        }
        Ok(p)
    }
}

impl From<StepPattern> for PatternJson {
    fn from(p: StepPattern) -> Self {
        PatternJson {
            tracks: p.tracks.iter().map(|t| t.to_vec()).collect(),
        }
    }
}

/// Linear map of a strip position onto [60, 180] BPM.
pub fn strip_to_tempo(position: f64) -> f64 {
    STRIP_TEMPO_MIN + position.clamp(0.0, 1.0) * (STRIP_TEMPO_MAX - STRIP_TEMPO_MIN)
}

pub fn pressure_cutoff(pressure: f32) -> f32 {
    PRESSURE_CUTOFF_BASE + pressure.clamp(0.0, 1.0) * PRESSURE_CUTOFF_SPAN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Immediate,
    Record,
}

/// A drum hit scheduled at `offset` frames into the advanced span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrigger {
    pub offset: usize,
    pub step: usize,
    pub kind: DrumKind,
    /// Low-pass cutoff for this hit, `None` when dry.
    pub cutoff: Option<f32>,
}

/// Step period as an exact rational `frames = numer / denom` so the
/// transport can carry the remainder from step to step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StepPeriod {
    numer: u64,
    denom: u64,
}

impl StepPeriod {
    /// Tempo is resolved to 1/1000 BPM.
    fn new(sample_rate: u32, tempo_bpm: f64) -> Self {
        let milli_bpm = (tempo_bpm * 1000.0).round().max(1.0) as u64;
        StepPeriod {
            numer: sample_rate as u64 * 60 * 1000,
            denom: milli_bpm * 4,
        }
    }

    fn frames(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

/// Transport position and scheduling state.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub playing: bool,
    /// Last step that fired.
    pub current_step: usize,
    /// Frames until the next step fires.
    pub samples_until_next_step: u64,
    pub tempo_bpm: f64,
}

#[derive(Debug, Clone)]
pub struct Sequencer {
    pattern: StepPattern,
    transport: TransportState,
    period: StepPeriod,
    /// Remainder carried between steps, in units of `1 / period.denom` frames.
    remainder: u64,
    /// Length of the step interval currently elapsing.
    current_len: u64,
    next_step: usize,
    sample_rate: u32,
    wet: bool,
}

impl Sequencer {
    pub fn new(sample_rate: u32, tempo_bpm: f64) -> Self {
        Sequencer {
            pattern: StepPattern::default(),
            transport: TransportState {
                playing: false,
                current_step: 0,
                samples_until_next_step: 0,
                tempo_bpm,
            },
            period: StepPeriod::new(sample_rate, tempo_bpm),
            remainder: 0,
            current_len: 0,
            next_step: 0,
            sample_rate,
            wet: true,
        }
    }

    pub fn pattern(&self) -> &StepPattern {
        &self.pattern
    }

    pub fn set_pattern(&mut self, pattern: StepPattern) {
        self.pattern = pattern;
    }

    pub fn transport(&self) -> &TransportState {
        &self.transport
    }

    pub fn is_wet(&self) -> bool {
        self.wet
    }

    /// Switch between pressure-filtered and dry drums.
    pub fn toggle_dry_wet(&mut self) -> bool {
        self.wet = !self.wet;
        self.wet
    }

    /// Cutoff applied to a hit of `pressure` under the current routing.
    pub fn hit_cutoff(&self, pressure: f32) -> Option<f32> {
        self.wet.then(|| pressure_cutoff(pressure))
    }

    /// Mirror a context tempo change; takes effect from the next step.
    pub fn set_tempo(&mut self, tempo_bpm: f64) {
        self.transport.tempo_bpm = tempo_bpm;
        let next = StepPeriod::new(self.sample_rate, tempo_bpm);
        // keep the carried fraction of a frame, expressed in the new units
        self.remainder = (self.remainder as u128 * next.denom as u128 / self.period.denom as u128) as u64;
        self.period = next;
    }

    pub fn step_period_frames(&self) -> f64 {
        self.period.frames()
    }

    /// Start from step 0, which fires at the next advanced frame.
    pub fn start(&mut self) {
        self.transport.playing = true;
        self.transport.current_step = 0;
        self.transport.samples_until_next_step = 0;
        self.next_step = 0;
        self.remainder = 0;
        self.current_len = 0;
    }

    pub fn stop(&mut self) {
        self.transport.playing = false;
    }

    fn next_interval(&mut self) -> u64 {
        let whole = self.period.numer / self.period.denom;
        self.remainder += self.period.numer % self.period.denom;
        if self.remainder >= self.period.denom {
            self.remainder -= self.period.denom;
            whole + 1
        } else {
            whole
        }
    }

    /// Fractional transport position in steps.
    pub fn position(&self) -> f64 {
        if !self.transport.playing || self.current_len == 0 {
            return self.transport.current_step as f64;
        }
        let elapsed = self.current_len - self.transport.samples_until_next_step;
        self.transport.current_step as f64 + elapsed as f64 / self.current_len as f64
    }

    /// Record-mode write at an explicit fractional position: nearest step,
    /// exact midpoints round down. Returns the step written.
    pub fn record_at(&mut self, track: usize, pressure: f32, position: f64) -> Result<usize, SequencerError> {
        if track >= TRACKS {
            return Err(SequencerError::Track(track));
        }
        let step = ((position - 0.5).ceil().max(0.0) as usize) % STEPS;
        self.pattern.set(
            track,
            step,
            Step {
                active: true,
                pressure: pressure.clamp(0.0, 1.0),
            },
        )?;
        Ok(step)
    }

    /// Handle a pad press. Immediate mode returns the hit to play now;
    /// record mode writes the nearest step and returns `None`.
    pub fn pad_hit(&mut self, track: usize, pressure: f32, mode: PadMode) -> Result<Option<StepTrigger>, SequencerError> {
        let kind = DrumKind::from_track(track).ok_or(SequencerError::Track(track))?;
        match mode {
            PadMode::Immediate => Ok(Some(StepTrigger {
                offset: 0,
                step: self.transport.current_step,
                kind,
                cutoff: self.hit_cutoff(pressure),
            })),
            PadMode::Record => {
                self.record_at(track, pressure, self.position())?;
                Ok(None)
            }
        }
    }

    /// Advance the transport by `frames`, returning the triggers inside the span.
    pub fn advance(&mut self, frames: usize) -> Vec<StepTrigger> {
        let mut out = Vec::new();
        self.advance_into(frames, &mut out);
        out
    }

    pub fn advance_into(&mut self, frames: usize, out: &mut Vec<StepTrigger>) {
        if !self.transport.playing {
            return;
        }
        let frames = frames as u64;
        let mut consumed = 0u64;
        while self.transport.samples_until_next_step < frames - consumed {
            consumed += self.transport.samples_until_next_step;
            let step = self.next_step;
            for track in 0..TRACKS {
                let s = self.pattern.get(track, step);
                if s.active {
                    out.push(StepTrigger {
                        offset: consumed as usize,
                        step,
                        kind: DrumKind::from_track(track).expect("track < 4"),
                        cutoff: self.hit_cutoff(s.pressure),
                    });
                }
            }
            self.transport.current_step = step;
            self.next_step = (step + 1) % STEPS;
            self.current_len = self.next_interval();
            self.transport.samples_until_next_step = self.current_len;
        }
        self.transport.samples_until_next_step -= frames - consumed;
    }
}
