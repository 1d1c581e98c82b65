//! Sound generators and effects. Everything here renders deterministically
//! from its inputs and a noise seed, so offline renders are bit-reproducible.

pub mod drums;
pub mod ks;
pub mod reverb;
pub mod svf;
pub mod synth;

use thiserror::Error;

pub use drums::{drum_voice, DrumKind, DrumKit};
pub use ks::{ks_pluck, KarplusStrong};
pub use reverb::Reverb;
pub use svf::{FilterMode, StateVariableFilter};
pub use synth::{Preset, Synth, VoiceCounts};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_BLOCK_SIZE: usize = 256;

/// Level above which the master bus starts to saturate.
pub const SOFT_CLIP_KNEE: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("frequency {frequency} Hz outside [20, {max}] Hz")]
    Frequency { frequency: f64, max: f64 },
    #[error("invalid preset {name:?}: {reason}")]
    Preset { name: String, reason: String },
}

/// Interleaved frames at a fixed rate; the unit of all rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBlock {
    samples: Vec<f32>,
    channels: usize,
    sample_rate: u32,
}

impl AudioBlock {
    pub fn silent(frames: usize, channels: usize, sample_rate: u32) -> Self {
        assert!(channels == 1 || channels == 2, "1 or 2 channels");
        AudioBlock {
            samples: vec![0.0; frames * channels],
            channels,
            sample_rate,
        }
    }

    pub fn from_samples(samples: Vec<f32>, channels: usize, sample_rate: u32) -> Self {
        assert!(channels == 1 || channels == 2, "1 or 2 channels");
        assert_eq!(samples.len() % channels, 0, "partial frame");
        AudioBlock {
            samples,
            channels,
            sample_rate,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn clear(&mut self) {
        self.samples.iter_mut().for_each(|s| *s = 0.0);
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Identity below the knee, tanh-shaped above it; output magnitude stays below 1.
pub fn soft_clip(x: f32) -> f32 {
    let mag = x.abs();
    if mag <= SOFT_CLIP_KNEE {
        x
    } else {
        let room = 1.0 - SOFT_CLIP_KNEE;
        let y = SOFT_CLIP_KNEE + room * ((mag - SOFT_CLIP_KNEE) / room).tanh();
        // tanh rounds to 1.0 in f32 for large inputs
        y.min(0.999_999).copysign(x)
    }
}

pub fn midi_to_hz(note: f64) -> f64 {
    440.0 * 2f64.powf((note - 69.0) / 12.0)
}

/// Exponential map of a 0..1 control onto 200 Hz..8 kHz.
pub fn cutoff_from_control(value: f32) -> f32 {
    200.0 * 40f32.powf(value.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_clip_is_bounded_and_transparent_below_knee() {
        for i in -2000..=2000 {
            let x = i as f32 / 100.0;
            let y = soft_clip(x);
            assert!(y.abs() < 1.0, "{x} -> {y}");
            if x.abs() <= SOFT_CLIP_KNEE {
                assert_eq!(y, x);
            }
        }
        assert!(soft_clip(0.95) > 0.9 && soft_clip(0.95) < 0.95);
        assert_eq!(soft_clip(1e9), 0.999_999);
    }

    #[test]
    fn cutoff_control_endpoints() {
        assert!((cutoff_from_control(0.0) - 200.0).abs() < 1e-3);
        assert!((cutoff_from_control(1.0) - 8000.0).abs() < 1e-2);
    }

    #[test]
    fn midi_reference_pitches() {
        assert!((midi_to_hz(69.0) - 440.0).abs() < 1e-12);
        assert!((midi_to_hz(60.0) - 261.6256).abs() < 1e-3);
    }
}
