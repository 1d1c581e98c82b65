//! Karplus-Strong plucked string.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DspError;

/// Loop gain applied on top of the two-tap average.
pub const FEEDBACK: f32 = 0.996;

/// Level of every overtone in the excitation relative to the fundamental.
const OVERTONE_LEVEL: f64 = 0.7;

pub const MIN_FREQUENCY: f64 = 20.0;

/// A noise-excited delay line with averaged feedback.
///
/// `y[n] = x[n] + g * (y[n-N] + y[n-N-1]) / 2`, where `x` is a one-period
/// noise burst and `N = round(sample_rate / frequency)`.
#[derive(Debug, Clone)]
pub struct KarplusStrong {
    delay: Vec<f32>,
    excitation: Vec<f32>,
    scratch: Vec<f64>,
    len: usize,
    pos: usize,
    /// `y[n-N-1]`: the value read from the line on the previous step.
    last_read: f32,
    /// Excitation samples still to be injected.
    exciting: usize,
    feedback: f32,
}

impl KarplusStrong {
    /// A silent string able to hold periods down to `min_frequency`.
    pub fn new(sample_rate: u32, min_frequency: f64) -> Self {
        let capacity = (sample_rate as f64 / min_frequency).round() as usize + 1;
        KarplusStrong {
            delay: vec![0.0; capacity],
            excitation: vec![0.0; capacity],
            scratch: vec![0.0; capacity],
            len: 0,
            pos: 0,
            last_read: 0.0,
            exciting: 0,
            feedback: FEEDBACK,
        }
    }

    pub fn delay_len(&self) -> usize {
        self.len
    }

    /// Restart the string at `frequency`. Frequencies outside the playable
    /// range are clamped; use [`ks_pluck`] for a validated one-shot.
    pub fn pluck<R: Rng>(&mut self, frequency: f64, velocity: f32, sample_rate: u32, rng: &mut R) {
        let max_f = sample_rate as f64 / 4.0;
        let frequency = frequency.clamp(MIN_FREQUENCY, max_f);
        let len = ((sample_rate as f64 / frequency).round() as usize).clamp(2, self.delay.len());
        self.len = len;
        self.pos = 0;
        self.last_read = 0.0;
        self.exciting = len;
        self.delay[..len].iter_mut().for_each(|s| *s = 0.0);
        fill_excitation_into(&mut self.excitation[..len], &mut self.scratch[..len], rng);
        self.excitation[..len].iter_mut().for_each(|s| *s *= velocity);
    }

    pub fn is_silent(&self) -> bool {
        self.len == 0
    }

    pub fn stop(&mut self) {
        self.len = 0;
    }

    #[inline]
    pub fn next_sample(&mut self) -> f32 {
        if self.len == 0 {
            return 0.0;
        }
        let oldest = self.delay[self.pos];
        let mut y = self.feedback * 0.5 * (oldest + self.last_read);
        if self.exciting > 0 {
            y += self.excitation[self.len - self.exciting];
            self.exciting -= 1;
        }
        self.last_read = oldest;
        self.delay[self.pos] = y;
        self.pos += 1;
        if self.pos == self.len {
            self.pos = 0;
        }
        y
    }
}

/// One period of seeded noise: every harmonic of the period at a random
/// phase, flat magnitude, with the fundamental 3 dB above the rest. Peak
/// normalized to 1.
pub fn fill_excitation<R: Rng>(out: &mut [f32], rng: &mut R) {
    let mut acc = vec![0.0f64; out.len()];
    fill_excitation_into(out, &mut acc, rng);
}

fn fill_excitation_into<R: Rng>(out: &mut [f32], acc: &mut [f64], rng: &mut R) {
    let n = out.len();
    if n == 0 {
        return;
    }
    acc.iter_mut().for_each(|a| *a = 0.0);
    for k in 1..=n / 2 {
        let amp = if k == 1 { 1.0 } else { OVERTONE_LEVEL };
        let phase: f64 = rng.random::<f64>() * TAU;
        let step = TAU * k as f64 / n as f64;
        let (ds, dc) = step.sin_cos();
        let (mut s, mut c) = phase.sin_cos();
        for a in acc.iter_mut() {
            *a += amp * c;
            let c2 = c * dc - s * ds;
            s = s * dc + c * ds;
            c = c2;
        }
    }
    let peak = acc.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o = (a * scale) as f32;
    }
}

/// Render a single pluck of `duration` seconds as mono samples.
pub fn ks_pluck(
    frequency: f64,
    velocity: f32,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<f32>, DspError> {
    let max = sample_rate as f64 / 4.0;
    if !(MIN_FREQUENCY..=max).contains(&frequency) {
        return Err(DspError::Frequency { frequency, max });
    }
    let frames = (duration.max(0.0) * sample_rate as f64).round() as usize;
    if frames == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut string = KarplusStrong::new(sample_rate, frequency);
    string.pluck(frequency, velocity.clamp(0.0, 1.0), sample_rate, &mut rng);
    Ok((0..frames).map(|_| string.next_sample()).collect())
}
