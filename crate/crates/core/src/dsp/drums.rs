//! Synthesized drum one-shots and the per-hit playback engine behind the pads.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::svf::{FilterMode, StateVariableFilter};

/// Amplitude ratio of the -60 dB floor.
const FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrumKind {
    Kick,
    Snare,
    Hat,
    /// Pitched tom for the fourth pad.
    Perc,
}

impl DrumKind {
    pub const ALL: [DrumKind; 4] = [DrumKind::Kick, DrumKind::Snare, DrumKind::Hat, DrumKind::Perc];

    /// Sequencer track / pad index for this kind.
    pub fn track(self) -> usize {
        self as usize
    }

    pub fn from_track(track: usize) -> Option<Self> {
        Self::ALL.get(track).copied()
    }
}

/// Amplitude envelope time constant per kind, seconds.
fn decay_tau(kind: DrumKind) -> f64 {
    match kind {
        DrumKind::Kick => 0.050,
        DrumKind::Snare => 0.030,
        DrumKind::Hat => 0.012,
        DrumKind::Perc => 0.045,
    }
}

/// Frames until `exp(-t / tau)` falls to the -60 dB floor.
fn length_frames(tau: f64, sample_rate: u32) -> usize {
    (-(FLOOR.ln()) * tau * sample_rate as f64).ceil() as usize
}

/// Sine with an exponential pitch sweep from `start` to `end` Hz.
fn swept_sine(start: f64, end: f64, sweep_tau: f64, amp_tau: f64, sample_rate: u32) -> Vec<f32> {
    let sr = sample_rate as f64;
    let mut phase = 0.0f64;
    (0..length_frames(amp_tau, sample_rate))
        .map(|i| {
            let t = i as f64 / sr;
            let s = phase.sin() * (-t / amp_tau).exp();
            let f = end + (start - end) * (-t / sweep_tau).exp();
            phase = (phase + TAU * f / sr) % TAU;
            s as f32
        })
        .collect()
}

fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn normalize(mut v: Vec<f32>, peak: f32) -> Vec<f32> {
    let m = v.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if m > 0.0 {
        let g = peak / m;
        v.iter_mut().for_each(|s| *s *= g);
    }
    v
}

/// Render one drum hit at `velocity` (0..1, linear amplitude scale).
pub fn drum_voice(kind: DrumKind, velocity: f32, sample_rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let sr = sample_rate as f64;
    let tau = decay_tau(kind);
    let shot = match kind {
        // 150 -> 50 Hz; e^-5 of the sweep remains after 150 ms
        DrumKind::Kick => swept_sine(150.0, 50.0, 0.030, tau, sample_rate),
        DrumKind::Perc => swept_sine(220.0, 110.0, 0.040, tau, sample_rate),
        DrumKind::Snare => {
            let len = length_frames(tau, sample_rate);
            let mut body = noise(len, &mut rng);
            let mut bp = StateVariableFilter::new(FilterMode::BandPass, sample_rate, 3000.0, 0.3);
            bp.process_mono(&mut body);
            let body = normalize(body, 1.0);
            body.iter()
                .enumerate()
                .map(|(i, n)| {
                    let t = i as f64 / sr;
                    let env = (-t / tau).exp();
                    let tone = (TAU * 180.0 * t).sin() * (-t / 0.025).exp();
                    (0.6 * *n as f64 * env + 0.4 * tone) as f32
                })
                .collect()
        }
        DrumKind::Hat => {
            let len = length_frames(tau, sample_rate);
            let mut body = noise(len, &mut rng);
            for _ in 0..2 {
                let mut hp = StateVariableFilter::new(FilterMode::HighPass, sample_rate, 7000.0, 0.0);
                hp.process_mono(&mut body);
            }
            body.iter()
                .enumerate()
                .map(|(i, n)| (*n as f64 * (-(i as f64 / sr) / tau).exp()) as f32)
                .collect()
        }
    };
    let velocity = velocity.clamp(0.0, 1.0);
    normalize(shot, 0.9).into_iter().map(|s| s * velocity).collect()
}

/// Hits that may overlap before the oldest is cut.
pub const MAX_HITS: usize = 16;

#[derive(Debug, Clone)]
struct Hit {
    kind: DrumKind,
    pos: usize,
    gain: f32,
    /// Per-hit low-pass; `None` renders the one-shot bit-exactly.
    filter: Option<StateVariableFilter>,
}

/// Pre-rendered one-shots plus a pool of sounding hits.
#[derive(Debug, Clone)]
pub struct DrumKit {
    shots: Vec<Vec<f32>>,
    hits: Vec<Hit>,
    sample_rate: u32,
}

impl DrumKit {
    pub fn new(sample_rate: u32, seed: u64) -> Self {
        DrumKit {
            shots: DrumKind::ALL.iter().map(|&k| drum_voice(k, 1.0, sample_rate, seed)).collect(),
            hits: Vec::with_capacity(MAX_HITS),
            sample_rate,
        }
    }

    pub fn shot(&self, kind: DrumKind) -> &[f32] {
        &self.shots[kind as usize]
    }

    /// Start a hit. `cutoff` engages the pressure-depth low-pass for this hit.
    pub fn trigger(&mut self, kind: DrumKind, velocity: f32, cutoff: Option<f32>) {
        if self.hits.len() == MAX_HITS {
            self.hits.remove(0);
        }
        self.hits.push(Hit {
            kind,
            pos: 0,
            gain: velocity.clamp(0.0, 1.0),
            filter: cutoff.map(|c| StateVariableFilter::lowpass(self.sample_rate, c, 0.0)),
        });
    }

    pub fn active_hits(&self) -> usize {
        self.hits.len()
    }

    /// Add the sounding hits into `out` (mono).
    pub fn render(&mut self, out: &mut [f32]) {
        let shots = &self.shots;
        for hit in self.hits.iter_mut() {
            let shot = &shots[hit.kind as usize];
            let n = out.len().min(shot.len() - hit.pos);
            for (o, s) in out[..n].iter_mut().zip(&shot[hit.pos..hit.pos + n]) {
                let x = s * hit.gain;
                *o += match hit.filter.as_mut() {
                    Some(f) => f.tick(0, x),
                    None => x,
                };
            }
            hit.pos += n;
        }
        self.hits.retain(|h| h.pos < shots[h.kind as usize].len());
    }
}
