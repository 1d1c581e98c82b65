//! Air harp: tracked body points moving between cells of a grid pluck notes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ms_to_frames, InstrumentError, Output, SensorPayload};
use crate::event::{EngineEvent, InstrumentId};
use crate::theory::{degree_to_midi, MusicalContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirHarpParams {
    pub columns: usize,
    pub rows: usize,
    /// Minimum time between two triggers of the same cell.
    pub refractory_ms: f64,
    /// Each pluck is released automatically after this long.
    pub note_ms: f64,
    /// Octave of the bottom row.
    pub base_octave: i32,
    pub velocity: u8,
}

impl Default for AirHarpParams {
    fn default() -> Self {
        AirHarpParams {
            columns: 8,
            rows: 3,
            refractory_ms: 120.0,
            note_ms: 400.0,
            base_octave: 3,
            velocity: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub column: usize,
    pub row: usize,
}

/// Columns ascend the scale left to right; each row up adds an octave.
#[derive(Debug, Clone)]
pub struct GridLayout {
    pub columns: usize,
    pub rows: usize,
    /// `(degree, octave)` for each cell, row-major from the bottom row.
    cells: Vec<(i32, i32)>,
    /// Frame before which each cell ignores entries.
    refractory_until: Vec<u64>,
}

impl GridLayout {
    pub fn new(columns: usize, rows: usize, base_octave: i32) -> Self {
        let columns = columns.max(1);
        let rows = rows.max(1);
        let cells = (0..rows)
            .flat_map(|r| (0..columns).map(move |c| (c as i32, base_octave + r as i32)))
            .collect();
        GridLayout {
            columns,
            rows,
            cells,
            refractory_until: vec![0; columns * rows],
        }
    }

    fn index(&self, cell: Cell) -> usize {
        cell.row * self.columns + cell.column
    }

    /// Cell containing a unit-square point; the top and right edges belong
    /// to the last row and column.
    pub fn cell_at(&self, x: f32, y: f32) -> Cell {
        let col = ((x * self.columns as f32).floor() as usize).min(self.columns - 1);
        let row = ((y * self.rows as f32).floor() as usize).min(self.rows - 1);
        Cell { column: col, row }
    }

    pub fn degree(&self, cell: Cell) -> (i32, i32) {
        self.cells[self.index(cell)]
    }

    pub fn pitch(&self, cell: Cell, ctx: &MusicalContext) -> u8 {
        let (degree, octave) = self.degree(cell);
        degree_to_midi(degree, octave, ctx)
    }
}

#[derive(Debug, Clone)]
pub struct AirHarp {
    pub id: InstrumentId,
    params: AirHarpParams,
    layout: GridLayout,
    refractory_frames: u64,
    note_frames: u64,
    /// Previous cell per body point.
    previous: BTreeMap<u32, Cell>,
    /// Sounding pitches and when each is released.
    sounding: BTreeMap<u8, u64>,
}

impl AirHarp {
    pub fn new(id: InstrumentId, params: AirHarpParams, sample_rate: u32) -> Self {
        AirHarp {
            id,
            layout: GridLayout::new(params.columns, params.rows, params.base_octave),
            refractory_frames: ms_to_frames(params.refractory_ms.max(0.0), sample_rate),
            note_frames: ms_to_frames(params.note_ms.max(0.0), sample_rate),
            params,
            previous: BTreeMap::new(),
            sounding: BTreeMap::new(),
        }
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn handle(&mut self, payload: &SensorPayload, now: u64, ctx: &MusicalContext) -> Result<Output, InstrumentError> {
        let SensorPayload::GridPoint { x, y, body } = *payload else {
            unreachable!("payload class checked by Instrument::handle");
        };
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(InstrumentError::Coordinates { x, y });
        }
        let mut out = self.tick(now);
        let cell = self.layout.cell_at(x, y);
        if self.previous.insert(body, cell) == Some(cell) {
            return Ok(out);
        }
        let idx = self.layout.index(cell);
        if now < self.layout.refractory_until[idx] {
            return Ok(out);
        }
        self.layout.refractory_until[idx] = now + self.refractory_frames;
        let pitch = self.layout.pitch(cell, ctx);
        if self.sounding.contains_key(&pitch) {
            out.events.push(EngineEvent::note_off(&self.id, now, pitch));
        }
        out.events.push(EngineEvent::note_on(&self.id, now, pitch, self.params.velocity));
        self.sounding.insert(pitch, now + self.note_frames);
        Ok(out)
    }

    /// Release plucks whose time is up, stamped at their due frame.
    pub fn tick(&mut self, now: u64) -> Output {
        let mut due: Vec<(u64, u8)> = self
            .sounding
            .iter()
            .filter(|(_, &until)| until <= now)
            .map(|(&p, &until)| (until, p))
            .collect();
        due.sort_unstable();
        let mut out = Output::default();
        for (until, pitch) in due {
            self.sounding.remove(&pitch);
            out.events.push(EngineEvent::note_off(&self.id, until, pitch));
        }
        out
    }

    pub fn release_all(&mut self, now: u64) -> Output {
        let mut out = self.tick(now);
        self.previous.clear();
        for pitch in std::mem::take(&mut self.sounding).into_keys() {
            out.events.push(EngineEvent::note_off(&self.id, now, pitch));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventKind;
    use crate::theory::{PitchClass, ScaleTable};

    const SR: u32 = 44_100;

    fn ctx() -> MusicalContext {
        MusicalContext::new(PitchClass::C, ScaleTable::shipped().get(0).unwrap().clone(), 120.0).unwrap()
    }

    fn harp() -> AirHarp {
        AirHarp::new("harp".into(), AirHarpParams::default(), SR)
    }

    fn point(x: f32, y: f32, body: u32) -> SensorPayload {
        SensorPayload::GridPoint { x, y, body }
    }

    fn ons(out: &Output) -> Vec<u8> {
        out.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::NoteOn { pitch, .. } => Some(pitch),
                _ => None,
            })
            .collect()
    }

    fn ms(v: f64) -> u64 {
        ms_to_frames(v, SR)
    }

    #[test]
    fn stationary_point_is_silent_after_entry() {
        let mut h = harp();
        let c = ctx();
        assert_eq!(ons(&h.handle(&point(0.3, 0.1, 0), 0, &c).unwrap()), vec![52]);
        for t in 1..50 {
            assert!(ons(&h.handle(&point(0.3, 0.1, 0), t * 100, &c).unwrap()).is_empty());
        }
    }

    #[test]
    fn sweep_gives_eight_ascending_notes() {
        let mut h = harp();
        let c = ctx();
        let mut notes = Vec::new();
        for i in 0..=100 {
            let out = h.handle(&point(i as f32 / 100.0, 0.5, 0), i * ms(10.0), &c).unwrap();
            notes.extend(ons(&out));
        }
        assert_eq!(notes, vec![60, 62, 64, 65, 67, 69, 71, 72]);
    }

    #[test]
    fn refractory_window() {
        let c = ctx();
        let mut h = harp();
        h.handle(&point(0.05, 0.05, 0), 0, &c).unwrap();
        h.handle(&point(0.2, 0.05, 0), ms(20.0), &c).unwrap();
        assert!(ons(&h.handle(&point(0.05, 0.05, 0), ms(50.0), &c).unwrap()).is_empty());

        let mut h = harp();
        h.handle(&point(0.05, 0.05, 0), 0, &c).unwrap();
        h.handle(&point(0.2, 0.05, 0), ms(20.0), &c).unwrap();
        let out = h.handle(&point(0.05, 0.05, 0), ms(150.0), &c).unwrap();
        // still sounding from the first pluck: re-pluck
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 48 });
        assert_eq!(ons(&out), vec![48]);
    }

    #[test]
    fn auto_release_after_400ms() {
        let c = ctx();
        let mut h = harp();
        h.handle(&point(0.5, 0.9, 0), 1000, &c).unwrap();
        assert!(h.tick(1000 + ms(399.0)).is_empty());
        let out = h.tick(1000 + ms(600.0));
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].timestamp, 1000 + ms(400.0));
        assert_eq!(out.events[0].kind, EventKind::NoteOff { pitch: 79 });
    }

    #[test]
    fn rows_add_octaves() {
        let h = harp();
        let c = ctx();
        let l = h.layout();
        assert_eq!(l.pitch(l.cell_at(0.0, 0.0), &c), 48);
        assert_eq!(l.pitch(l.cell_at(0.0, 0.5), &c), 60);
        assert_eq!(l.pitch(l.cell_at(0.0, 1.0), &c), 72);
        assert_eq!(l.pitch(l.cell_at(1.0, 1.0), &c), 84);
    }

    #[test]
    fn bodies_track_their_own_cells() {
        let c = ctx();
        let mut h = harp();
        assert_eq!(ons(&h.handle(&point(0.05, 0.05, 1), 0, &c).unwrap()), vec![48]);
        assert_eq!(ons(&h.handle(&point(0.95, 0.05, 2), ms(5.0), &c).unwrap()), vec![60]);
        assert!(ons(&h.handle(&point(0.05, 0.05, 1), ms(200.0), &c).unwrap()).is_empty());
    }

    #[test]
    fn rejects_points_outside_unit_square() {
        let mut h = harp();
        assert!(h.handle(&point(1.2, 0.5, 0), 0, &ctx()).is_err());
        assert!(h.handle(&point(0.2, -0.1, 0), 0, &ctx()).is_err());
        assert!(h.handle(&point(f32::NAN, 0.1, 0), 0, &ctx()).is_err());
    }
}
