//! Scripted stand-ins for the physical controllers.

use ensemble_core::instruments::{SensorFrame, SensorPayload};
use ensemble_core::io::sensor::SensorLine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Yaw,
    Pitch,
    Roll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Pattern {
    /// Kick on every beat, hat on the off-beats.
    FourOnFloor,
}

/// `count` orientation frames moving from -90 to +90 degrees on one axis.
pub fn sweep(inst: &str, axis: Axis, count: usize, spacing: u64) -> Vec<SensorLine> {
    (0..count)
        .map(|i| {
            let a = if count > 1 {
                -90.0 + 180.0 * i as f32 / (count - 1) as f32
            } else {
                0.0
            };
            let (yaw, pitch, roll) = match axis {
                Axis::Yaw => (a, 0.0, 0.0),
                Axis::Pitch => (0.0, a, 0.0),
                Axis::Roll => (0.0, 0.0, a),
            };
            SensorLine::frame(
                Some(i as u64 * spacing),
                SensorFrame::new(inst, SensorPayload::Orientation { yaw, pitch, roll }),
            )
        })
        .collect()
}

/// Random walk of grid points in the unit square.
pub fn walk(inst: &str, count: usize, spacing: u64, seed: u64) -> Vec<SensorLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (0.5f32, 0.5f32);
    (0..count)
        .map(|i| {
            x = (x + rng.random_range(-0.08..=0.08)).clamp(0.0, 1.0);
            y = (y + rng.random_range(-0.08..=0.08)).clamp(0.0, 1.0);
            SensorLine::frame(
                Some(i as u64 * spacing),
                SensorFrame::new(inst, SensorPayload::GridPoint { x, y, body: 0 }),
            )
        })
        .collect()
}

/// Pad hits for `beats` beats at `tempo_bpm`.
pub fn pattern(inst: &str, pattern: Pattern, beats: usize, tempo_bpm: f64, sample_rate: u32) -> Vec<SensorLine> {
    let beat = 60.0 * sample_rate as f64 / tempo_bpm;
    let hit = |at: f64, pad: u32, pressure: f32| {
        SensorLine::frame(
            Some(at.round() as u64),
            SensorFrame::new(inst, SensorPayload::PadPressure { pad, pressure }),
        )
    };
    match pattern {
        Pattern::FourOnFloor => (0..beats)
            .flat_map(|b| {
                let t = b as f64 * beat;
                [hit(t, 0, 0.9), hit(t + beat / 2.0, 2, 0.5)]
            })
            .collect(),
    }
}
