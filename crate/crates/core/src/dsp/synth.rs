//! Polyphonic multi-oscillator subtractive synth with an optional
//! Karplus-Strong pluck layer.

use std::f64::consts::TAU;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ks::KarplusStrong;
use super::svf::{StateVariableFilter, MAX_CUTOFF, MIN_CUTOFF};
use super::{midi_to_hz, DspError};

pub const POLYPHONY: usize = 8;
pub const MAX_OSCILLATORS: usize = 4;

/// Per-voice output gain before the mix bus.
const VOICE_GAIN: f32 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Saw,
    Square,
    Triangle,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub waveform: Waveform,
    #[serde(default)]
    pub detune_cents: f32,
    pub level: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub cutoff_hz: f32,
    #[serde(default)]
    pub resonance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub attack: f32,
    pub decay: f32,
    pub sustain: f32,
    pub release: f32,
}

/// A named parameter set for the synth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub id: u32,
    pub name: String,
    pub oscillators: Vec<Oscillator>,
    pub filter: FilterSettings,
    pub envelope: Envelope,
    /// Layer a Karplus-Strong pluck with the oscillators, equal power.
    #[serde(default)]
    pub pluck: bool,
    #[serde(default)]
    pub reverb_send: f32,
}

impl Preset {
    pub fn validate(&self) -> Result<(), DspError> {
        let fail = |reason: String| {
            Err(DspError::Preset {
                name: self.name.clone(),
                reason,
            })
        };
        if self.oscillators.len() > MAX_OSCILLATORS {
            return fail(format!("at most {MAX_OSCILLATORS} oscillators"));
        }
        if self.oscillators.is_empty() && !self.pluck {
            return fail("needs an oscillator or the pluck layer".into());
        }
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if self.oscillators.iter().any(|o| !unit(o.level) || !o.detune_cents.is_finite()) {
            return fail("oscillator level must be in [0, 1]".into());
        }
        if !(MIN_CUTOFF..=MAX_CUTOFF).contains(&self.filter.cutoff_hz) {
            return fail(format!("cutoff {} outside [20, 18000] Hz", self.filter.cutoff_hz));
        }
        if !unit(self.filter.resonance) || !unit(self.reverb_send) || !unit(self.envelope.sustain) {
            return fail("resonance, sustain and reverb send must be in [0, 1]".into());
        }
        let e = &self.envelope;
        if [e.attack, e.decay, e.release].iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return fail("envelope times must be >= 0".into());
        }
        Ok(())
    }

    /// The six presets shipped in the default config.
    pub fn shipped() -> Vec<Preset> {
        let osc = |waveform, detune_cents, level| Oscillator {
            waveform,
            detune_cents,
            level,
        };
        let env = |attack, decay, sustain, release| Envelope {
            attack,
            decay,
            sustain,
            release,
        };
        let preset = |id, name: &str, oscillators, cutoff_hz, resonance, envelope, pluck, reverb_send| Preset {
            id,
            name: name.into(),
            oscillators,
            filter: FilterSettings { cutoff_hz, resonance },
            envelope,
            pluck,
            reverb_send,
        };
        use Waveform::*;
        vec![
            preset(0, "glass_pluck", vec![osc(Triangle, 0.0, 0.6), osc(Sine, 1200.0, 0.3)], 4000.0, 0.1,
                env(0.003, 0.6, 0.5, 0.4), true, 0.25),
            preset(1, "warm_pad", vec![osc(Saw, -7.0, 0.5), osc(Saw, 7.0, 0.5), osc(Sine, -1200.0, 0.4)], 1200.0, 0.2,
                env(0.25, 0.8, 0.7, 0.9), false, 0.4),
            preset(2, "bright_lead", vec![osc(Saw, 0.0, 0.7), osc(Square, 5.0, 0.4)], 6000.0, 0.35,
                env(0.01, 0.2, 0.8, 0.25), false, 0.15),
            preset(3, "hollow_square", vec![osc(Square, 0.0, 0.6), osc(Square, -1200.0, 0.3)], 2200.0, 0.4,
                env(0.02, 0.4, 0.6, 0.35), false, 0.2),
            preset(4, "soft_sine", vec![osc(Sine, 0.0, 0.8), osc(Triangle, 3.0, 0.3)], 3000.0, 0.0,
                env(0.04, 0.5, 0.8, 0.6), false, 0.3),
            preset(5, "harp_string", vec![osc(Triangle, 0.0, 0.15)], 5000.0, 0.0,
                env(0.001, 1.5, 0.0, 0.3), true, 0.35),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Idle,
    Attack,
    Decay,
    Sustain,
    Release,
}

#[derive(Debug, Clone)]
struct Voice {
    stage: Stage,
    pitch: u8,
    velocity: f32,
    level: f32,
    release_step: f32,
    phases: [f64; MAX_OSCILLATORS],
    filter: StateVariableFilter,
    string: KarplusStrong,
    /// Note-on order, for stealing.
    started: u64,
    /// Release order, for stealing.
    released: u64,
}

impl Voice {
    fn new(sample_rate: u32) -> Self {
        Voice {
            stage: Stage::Idle,
            pitch: 0,
            velocity: 0.0,
            level: 0.0,
            release_step: 0.0,
            phases: [0.0; MAX_OSCILLATORS],
            filter: StateVariableFilter::lowpass(sample_rate, 1000.0, 0.0),
            string: KarplusStrong::new(sample_rate, super::ks::MIN_FREQUENCY),
            started: 0,
            released: 0,
        }
    }

    fn is_releasing(&self) -> bool {
        self.stage == Stage::Release
    }

    fn is_active(&self) -> bool {
        matches!(self.stage, Stage::Attack | Stage::Decay | Stage::Sustain)
    }

    /// Linear ADSR, one sample.
    fn envelope(&mut self, env: &Envelope, sr: f32) -> f32 {
        match self.stage {
            Stage::Idle => return 0.0,
            Stage::Attack => {
                let step = if env.attack > 0.0 { 1.0 / (env.attack * sr) } else { 1.0 };
                self.level += step;
                if self.level >= 1.0 {
                    self.level = 1.0;
                    self.stage = Stage::Decay;
                }
            }
            Stage::Decay => {
                let step = if env.decay > 0.0 { (1.0 - env.sustain) / (env.decay * sr) } else { 1.0 };
                self.level -= step;
                if self.level <= env.sustain {
                    self.level = env.sustain;
                    self.stage = Stage::Sustain;
                }
            }
            Stage::Sustain => self.level = env.sustain,
            Stage::Release => {
                self.level -= self.release_step;
                if self.level <= 0.0 {
                    self.level = 0.0;
                    self.stage = Stage::Idle;
                    self.string.stop();
                }
            }
        }
        self.level
    }

    fn release(&mut self, env: &Envelope, sr: f32, order: u64) {
        self.stage = Stage::Release;
        self.released = order;
        self.release_step = if env.release > 0.0 {
            self.level / (env.release * sr)
        } else {
            f32::INFINITY
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoiceCounts {
    pub active: usize,
    pub releasing: usize,
    pub idle: usize,
}

#[inline]
fn poly_blep(t: f64, dt: f64) -> f64 {
    if t < dt {
        let t = t / dt;
        t + t - t * t - 1.0
    } else if t > 1.0 - dt {
        let t = (t - 1.0) / dt;
        t * t + t + t + 1.0
    } else {
        0.0
    }
}

#[inline]
fn oscillate(waveform: Waveform, phase: f64, dt: f64) -> f64 {
    match waveform {
        Waveform::Sine => (TAU * phase).sin(),
        Waveform::Saw => 2.0 * phase - 1.0 - poly_blep(phase, dt),
        Waveform::Square => {
            let naive = if phase < 0.5 { 1.0 } else { -1.0 };
            naive + poly_blep(phase, dt) - poly_blep((phase + 0.5) % 1.0, dt)
        }
        Waveform::Triangle => 1.0 - 4.0 * (phase - 0.5).abs(),
    }
}

/// Fixed-polyphony synth instance owned by one instrument.
#[derive(Debug, Clone)]
pub struct Synth {
    voices: Vec<Voice>,
    preset: Preset,
    sample_rate: u32,
    order: u64,
    cutoff_override: Option<f32>,
    glide_hz: Option<f64>,
    rng: ChaCha8Rng,
}

impl Synth {
    pub fn new(preset: Preset, sample_rate: u32, seed: u64) -> Self {
        Synth {
            voices: (0..POLYPHONY).map(|_| Voice::new(sample_rate)).collect(),
            preset,
            sample_rate,
            order: 0,
            cutoff_override: None,
            glide_hz: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    /// Swap presets; sounding voices continue with the new parameters.
    pub fn set_preset(&mut self, preset: Preset) {
        self.preset = preset;
    }

    pub fn set_cutoff(&mut self, hz: Option<f32>) {
        self.cutoff_override = hz;
    }

    /// Continuous pitch for every sounding voice; `None` returns to note pitch.
    pub fn set_glide(&mut self, hz: Option<f64>) {
        self.glide_hz = hz;
    }

    pub fn counts(&self) -> VoiceCounts {
        let active = self.voices.iter().filter(|v| v.is_active()).count();
        let releasing = self.voices.iter().filter(|v| v.is_releasing()).count();
        VoiceCounts {
            active,
            releasing,
            idle: self.voices.len() - active - releasing,
        }
    }

    /// Pitches of voices holding a note (not releasing), oldest first.
    pub fn active_pitches(&self) -> Vec<u8> {
        let mut v: Vec<&Voice> = self.voices.iter().filter(|v| v.is_active()).collect();
        v.sort_by_key(|v| v.started);
        v.iter().map(|v| v.pitch).collect()
    }

    /// Claim an idle voice, else steal the oldest releasing, else the oldest active.
    /// Returns the voice index.
    pub fn note_on(&mut self, pitch: u8, velocity: u8) -> usize {
        let idx = self
            .voices
            .iter()
            .position(|v| v.stage == Stage::Idle)
            .or_else(|| {
                self.voices
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_releasing())
                    .min_by_key(|(_, v)| v.released)
                    .map(|(i, _)| i)
            })
            .unwrap_or_else(|| {
                self.voices
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, v)| v.started)
                    .map(|(i, _)| i)
                    .expect("polyphony > 0")
            });
        self.order += 1;
        let sr = self.sample_rate;
        let freq = midi_to_hz(pitch.min(127) as f64);
        let v = &mut self.voices[idx];
        v.stage = Stage::Attack;
        v.pitch = pitch.min(127);
        v.velocity = velocity.min(127) as f32 / 127.0;
        v.level = 0.0;
        v.started = self.order;
        v.phases = [0.0; MAX_OSCILLATORS];
        v.filter.reset();
        if self.preset.pluck {
            v.string.pluck(freq, 1.0, sr, &mut self.rng);
        } else {
            v.string.stop();
        }
        idx
    }

    /// Release every held voice playing `pitch`; unmatched pitches are ignored.
    pub fn note_off(&mut self, pitch: u8) {
        let sr = self.sample_rate as f32;
        for v in self.voices.iter_mut().filter(|v| v.is_active() && v.pitch == pitch) {
            self.order += 1;
            v.release(&self.preset.envelope, sr, self.order);
        }
    }

    pub fn all_notes_off(&mut self) {
        let sr = self.sample_rate as f32;
        for v in self.voices.iter_mut().filter(|v| v.is_active()) {
            self.order += 1;
            v.release(&self.preset.envelope, sr, self.order);
        }
    }

    /// Add this synth's mono output into `out`.
    pub fn render(&mut self, out: &mut [f32]) {
        let sr = self.sample_rate as f32;
        let preset = &self.preset;
        let cutoff = self.cutoff_override.unwrap_or(preset.filter.cutoff_hz);
        let n_osc = preset.oscillators.len().min(MAX_OSCILLATORS);
        let (osc_gain, ks_gain) = if preset.pluck {
            (std::f32::consts::FRAC_1_SQRT_2, std::f32::consts::FRAC_1_SQRT_2)
        } else {
            (1.0, 0.0)
        };
        for v in self.voices.iter_mut().filter(|v| v.stage != Stage::Idle) {
            v.filter.set_params(cutoff, preset.filter.resonance);
            let freq = self.glide_hz.unwrap_or_else(|| midi_to_hz(v.pitch as f64));
            let mut incs = [0.0f64; MAX_OSCILLATORS];
            for (inc, osc) in incs.iter_mut().zip(&preset.oscillators) {
                *inc = freq * 2f64.powf(osc.detune_cents as f64 / 1200.0) / sr as f64;
            }
            for o in out.iter_mut() {
                let mut sum = 0.0f64;
                for i in 0..n_osc {
                    let osc = &preset.oscillators[i];
                    let dt = incs[i].min(0.5);
                    sum += osc.level as f64 * oscillate(osc.waveform, v.phases[i], dt);
                    v.phases[i] = (v.phases[i] + incs[i]) % 1.0;
                }
                let tone = v.filter.tick(0, 0.5 * sum as f32);
                let pluck = v.string.next_sample();
                let env = v.envelope(&preset.envelope, sr);
                *o += VOICE_GAIN * v.velocity * env * (osc_gain * tone + ks_gain * pluck);
                if v.stage == Stage::Idle {
                    break;
                }
            }
        }
    }
}
