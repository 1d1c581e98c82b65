//! Pitch classes, scales and the shared musical context that locks every
//! instrument in the ensemble to one key and scale.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest MIDI note number.
pub const MIDI_MAX: u8 = 127;

/// Slowest tempo the context accepts.
pub const TEMPO_MIN: f64 = 20.0;
/// Fastest tempo the context accepts.
pub const TEMPO_MAX: f64 = 300.0;

const NOTE_NAMES: [&str; 12] = [
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("pitch class {0} is outside 0..=11")]
    PitchClass(i64),
    #[error("scale {name:?}: {reason}")]
    InvalidScale { name: String, reason: &'static str },
    #[error("unknown scale id {0}")]
    UnknownScale(u32),
    #[error("duplicate scale id {0}")]
    DuplicateScale(u32),
    #[error("tempo {0} BPM outside [20, 300]")]
    Tempo(f64),
    #[error("scale table is empty")]
    EmptyTable,
}

/// Semitone class 0..=11, 0 = C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct PitchClass(u8);

impl PitchClass {
    pub const C: PitchClass = PitchClass(0);

    pub fn new(value: i64) -> Result<Self, TheoryError> {
        if (0..12).contains(&value) {
            Ok(PitchClass(value as u8))
        } else {
            Err(TheoryError::PitchClass(value))
        }
    }

    /// Pitch class of a MIDI note.
    pub fn of_note(note: u8) -> Self {
        PitchClass(note % 12)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        NOTE_NAMES[self.0 as usize]
    }
}

impl TryFrom<i64> for PitchClass {
    type Error = TheoryError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        PitchClass::new(v)
    }
}

impl From<PitchClass> for u8 {
    fn from(p: PitchClass) -> u8 {
        p.0
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An octave-repeating scale given as semitone offsets from its root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScale")]
pub struct Scale {
    pub id: u32,
    pub name: String,
    intervals: Vec<u8>,
    /// Bit `i` set when offset `i` belongs to the scale.
    #[serde(skip)]
    mask: u16,
}

#[derive(Deserialize)]
struct RawScale {
    id: u32,
    name: String,
    intervals: Vec<i64>,
}

impl TryFrom<RawScale> for Scale {
    type Error = TheoryError;
    fn try_from(raw: RawScale) -> Result<Self, Self::Error> {
        let invalid = |reason| TheoryError::InvalidScale {
            name: raw.name.clone(),
            reason,
        };
        if raw.intervals.iter().any(|&i| !(0..12).contains(&i)) {
            return Err(invalid("intervals must lie in 0..=11"));
        }
        let intervals: Vec<u8> = raw.intervals.iter().map(|&i| i as u8).collect();
        Scale::new(raw.id, raw.name.clone(), intervals)
    }
}

impl Scale {
    pub fn new(id: u32, name: impl Into<String>, intervals: Vec<u8>) -> Result<Self, TheoryError> {
        let name = name.into();
        let invalid = |reason| TheoryError::InvalidScale {
            name: name.clone(),
            reason,
        };
        if intervals.is_empty() {
            return Err(invalid("intervals must not be empty"));
        }
        if intervals[0] != 0 {
            return Err(invalid("first interval must be 0"));
        }
        if intervals.iter().any(|&i| i > 11) {
            return Err(invalid("intervals must lie in 0..=11"));
        }
        if intervals.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("intervals must be strictly increasing"));
        }
        let mask = intervals.iter().fold(0u16, |m, &i| m | (1 << i));
        Ok(Scale {
            id,
            name,
            intervals,
            mask,
        })
    }

    pub fn intervals(&self) -> &[u8] {
        &self.intervals
    }

    /// Number of degrees per octave.
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Whether `offset` semitones above the root (mod 12) is a scale member.
    pub fn contains_offset(&self, offset: u8) -> bool {
        self.mask & (1 << (offset % 12)) != 0
    }
}

/// The scales every instrument can be locked to, keyed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    scales: Vec<Arc<Scale>>,
}

impl ScaleTable {
    pub fn new(scales: Vec<Scale>) -> Result<Self, TheoryError> {
        if scales.is_empty() {
            return Err(TheoryError::EmptyTable);
        }
        let mut seen = std::collections::HashSet::new();
        for s in &scales {
            if !seen.insert(s.id) {
                return Err(TheoryError::DuplicateScale(s.id));
            }
        }
        Ok(ScaleTable {
            scales: scales.into_iter().map(Arc::new).collect(),
        })
    }

    /// The eight scales shipped with the engine, ids 0..=7.
    pub fn shipped() -> Self {
        let defs: [(&str, &[u8]); 8] = [
            ("major", &[0, 2, 4, 5, 7, 9, 11]),
            ("natural_minor", &[0, 2, 3, 5, 7, 8, 10]),
            ("major_pentatonic", &[0, 2, 4, 7, 9]),
            ("minor_pentatonic", &[0, 3, 5, 7, 10]),
            ("dorian", &[0, 2, 3, 5, 7, 9, 10]),
            ("mixolydian", &[0, 2, 4, 5, 7, 9, 10]),
            ("harmonic_minor", &[0, 2, 3, 5, 7, 8, 11]),
            ("chromatic", &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
        ];
        let scales = defs
            .iter()
            .enumerate()
            .map(|(id, (name, iv))| Scale::new(id as u32, *name, iv.to_vec()).expect("shipped scale"))
            .collect();
        ScaleTable::new(scales).expect("shipped table")
    }

    pub fn get(&self, id: u32) -> Option<&Arc<Scale>> {
        self.scales.iter().find(|s| s.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Scale>> {
        self.scales.iter()
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// The id following `id` in table order, wrapping around.
    pub fn next_id(&self, id: u32) -> u32 {
        let pos = self.scales.iter().position(|s| s.id == id).unwrap_or(0);
        self.scales[(pos + 1) % self.scales.len()].id
    }
}

/// Key, scale and tempo shared by the whole ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicalContext {
    pub key: PitchClass,
    pub scale: Arc<Scale>,
    pub tempo_bpm: f64,
}

impl MusicalContext {
    pub fn new(key: PitchClass, scale: Arc<Scale>, tempo_bpm: f64) -> Result<Self, TheoryError> {
        check_tempo(tempo_bpm)?;
        Ok(MusicalContext {
            key,
            scale,
            tempo_bpm,
        })
    }

    /// Whether the note's pitch class is in this context's key and scale.
    pub fn contains(&self, note: u8) -> bool {
        let offset = (note % 12 + 12 - self.key.value()) % 12;
        self.scale.contains_offset(offset)
    }

    /// The twelve-bit pitch-class membership set, bit `pc` set for members.
    pub fn pitch_class_set(&self) -> u16 {
        (0..12u8).filter(|&pc| self.contains(pc)).fold(0, |m, pc| m | (1 << pc))
    }

    /// MIDI note of the root in octave 4 (C4 = 60).
    pub fn root_note(&self) -> u8 {
        60 + self.key.value()
    }
}

impl fmt::Display for MusicalContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} BPM", self.key, self.scale.name, self.tempo_bpm)
    }
}

fn check_tempo(bpm: f64) -> Result<(), TheoryError> {
    if (TEMPO_MIN..=TEMPO_MAX).contains(&bpm) {
        Ok(())
    } else {
        Err(TheoryError::Tempo(bpm))
    }
}

/// Snap `note` to the nearest in-scale MIDI note; on a tie the lower one wins.
pub fn quantize_to_scale(note: u8, ctx: &MusicalContext) -> u8 {
    let note = note.min(MIDI_MAX);
    for distance in 0..=MIDI_MAX {
        if let Some(below) = note.checked_sub(distance) {
            if ctx.contains(below) {
                return below;
            }
        }
        let above = note as u16 + distance as u16;
        if above <= MIDI_MAX as u16 && ctx.contains(above as u8) {
            return above as u8;
        }
    }
    // Every scale contains its root, so some note in 0..=127 always matches.
    unreachable!("scale without a root")
}

/// Absolute note for a scale degree, before clamping to the MIDI range.
pub fn degree_to_note(degree: i32, octave: i32, ctx: &MusicalContext) -> i32 {
    let n = ctx.scale.len() as i32;
    let interval = ctx.scale.intervals()[degree.rem_euclid(n) as usize] as i32;
    12 * (octave + 1) + ctx.key.value() as i32 + interval + 12 * degree.div_euclid(n)
}

/// MIDI note for scale degree `degree` counted from the root in `octave`,
/// clamped to 0..=127. Degree 0 in octave 4 with key C is middle C (60).
pub fn degree_to_midi(degree: i32, octave: i32, ctx: &MusicalContext) -> u8 {
    degree_to_note(degree, octave, ctx).clamp(0, MIDI_MAX as i32) as u8
}

/// The scale member two degrees above `note` (a diatonic third).
///
/// Out-of-scale input is quantized first. When the third would exceed the
/// MIDI range the highest in-scale note is returned instead.
pub fn diatonic_harmony(note: u8, ctx: &MusicalContext) -> u8 {
    let note = quantize_to_scale(note, ctx);
    let offset = (note % 12 + 12 - ctx.key.value()) % 12;
    let idx = ctx
        .scale
        .intervals()
        .iter()
        .position(|&i| i == offset)
        .expect("quantized note is in scale") as i32;
    let up = degree_to_note(idx + 2, 0, ctx) - degree_to_note(idx, 0, ctx);
    let target = note as i32 + up;
    if target <= MIDI_MAX as i32 {
        target as u8
    } else {
        (note..=MIDI_MAX).rev().find(|&m| ctx.contains(m)).unwrap_or(note)
    }
}

/// Emitted whenever the shared context changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextChanged {
    pub previous: MusicalContext,
    pub current: MusicalContext,
    /// Increments by one on every accepted change.
    pub revision: u64,
}

/// Single-writer owner of the ensemble's [`MusicalContext`].
#[derive(Debug, Clone)]
pub struct ContextStore {
    table: Arc<ScaleTable>,
    current: MusicalContext,
    revision: u64,
}

impl ContextStore {
    pub fn new(table: Arc<ScaleTable>, key: PitchClass, scale_id: u32, tempo_bpm: f64) -> Result<Self, TheoryError> {
        let scale = table.get(scale_id).ok_or(TheoryError::UnknownScale(scale_id))?.clone();
        let current = MusicalContext::new(key, scale, tempo_bpm)?;
        Ok(ContextStore {
            table,
            current,
            revision: 0,
        })
    }

    pub fn table(&self) -> &Arc<ScaleTable> {
        &self.table
    }

    pub fn current(&self) -> &MusicalContext {
        &self.current
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Validate and install a new context. On error the prior context is kept.
    pub fn set_context(&mut self, key: PitchClass, scale_id: u32, tempo_bpm: f64) -> Result<ContextChanged, TheoryError> {
        let scale = self
            .table
            .get(scale_id)
            .ok_or(TheoryError::UnknownScale(scale_id))?
            .clone();
        let next = MusicalContext::new(key, scale, tempo_bpm)?;
        let previous = std::mem::replace(&mut self.current, next);
        self.revision += 1;
        Ok(ContextChanged {
            previous,
            current: self.current.clone(),
            revision: self.revision,
        })
    }

    pub fn set_key(&mut self, key: PitchClass) -> Result<ContextChanged, TheoryError> {
        let (id, tempo) = (self.current.scale.id, self.current.tempo_bpm);
        self.set_context(key, id, tempo)
    }

    pub fn set_tempo(&mut self, tempo_bpm: f64) -> Result<ContextChanged, TheoryError> {
        let (key, id) = (self.current.key, self.current.scale.id);
        self.set_context(key, id, tempo_bpm)
    }

    /// Advance to the next scale in table order.
    pub fn cycle_scale(&mut self) -> ContextChanged {
        let next = self.table.next_id(self.current.scale.id);
        let (key, tempo) = (self.current.key, self.current.tempo_bpm);
        self.set_context(key, next, tempo).expect("table id with current tempo")
    }
}
