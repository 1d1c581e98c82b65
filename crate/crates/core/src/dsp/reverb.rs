//! Schroeder reverberator: four parallel feedback combs into two series all-passes.

use super::AudioBlock;

const COMB_MS: [f64; 4] = [29.7, 37.1, 41.1, 43.7];
const ALLPASS_MS: [f64; 2] = [5.0, 1.7];
const ALLPASS_GAIN: f32 = 0.7;
/// Decay time of the comb bank to -60 dB.
pub const DECAY_SECONDS: f64 = 1.8;
/// Extra delay on the right channel's combs, for width.
const STEREO_SPREAD: usize = 23;

#[derive(Debug, Clone)]
struct Comb {
    buf: Vec<f32>,
    pos: usize,
    gain: f32,
}

impl Comb {
    fn new(len: usize, sample_rate: u32) -> Self {
        let gain = 10f64.powf(-3.0 * len as f64 / (DECAY_SECONDS * sample_rate as f64)) as f32;
        Comb {
            buf: vec![0.0; len],
            pos: 0,
            gain,
        }
    }

    #[inline]
    fn tick(&mut self, x: f32) -> f32 {
        let y = self.buf[self.pos];
        self.buf[self.pos] = x + self.gain * y;
        self.pos = (self.pos + 1) % self.buf.len();
        y
    }
}

#[derive(Debug, Clone)]
struct AllPass {
    buf: Vec<f32>,
    pos: usize,
}

impl AllPass {
    fn new(len: usize) -> Self {
        AllPass {
            buf: vec![0.0; len],
            pos: 0,
        }
    }

    #[inline]
    fn tick(&mut self, x: f32) -> f32 {
        let delayed = self.buf[self.pos];
        let v = x + ALLPASS_GAIN * delayed;
        self.buf[self.pos] = v;
        self.pos = (self.pos + 1) % self.buf.len();
        delayed - ALLPASS_GAIN * v
    }
}

#[derive(Debug, Clone)]
struct Channel {
    combs: Vec<Comb>,
    allpasses: Vec<AllPass>,
}

impl Channel {
    fn new(sample_rate: u32, spread: usize) -> Self {
        let samples = |ms: f64| (ms * 1e-3 * sample_rate as f64).round() as usize;
        Channel {
            combs: COMB_MS.iter().map(|&ms| Comb::new(samples(ms) + spread, sample_rate)).collect(),
            allpasses: ALLPASS_MS.iter().map(|&ms| AllPass::new(samples(ms).max(1))).collect(),
        }
    }

    #[inline]
    fn tick(&mut self, x: f32) -> f32 {
        let sum: f32 = self.combs.iter_mut().map(|c| c.tick(x)).sum::<f32>() * 0.25;
        self.allpasses.iter_mut().fold(sum, |s, ap| ap.tick(s))
    }
}

#[derive(Debug, Clone)]
pub struct Reverb {
    channels: [Channel; 2],
}

impl Reverb {
    pub fn new(sample_rate: u32) -> Self {
        Reverb {
            channels: [Channel::new(sample_rate, 0), Channel::new(sample_rate, STEREO_SPREAD)],
        }
    }

    /// Mix the reverberated signal into `block`: `(1 - wet) * dry + wet * reverb`.
    ///
    /// The tank is fed at every wet level; at `wet == 0` the block is left
    /// untouched.
    pub fn process(&mut self, block: &mut AudioBlock, wet: f32) {
        let wet = wet.clamp(0.0, 1.0);
        let dry = 1.0 - wet;
        let channels = block.channels();
        for frame in block.samples_mut().chunks_exact_mut(channels) {
            for (ch, s) in frame.iter_mut().enumerate() {
                let r = self.channels[ch].tick(*s);
                if wet > 0.0 {
                    *s = dry * *s + wet * r;
                }
            }
        }
    }

    /// Mono send in, stereo wet signal added to `out` (interleaved L/R).
    pub fn process_send(&mut self, send: &[f32], out: &mut [f32]) {
        for (x, frame) in send.iter().zip(out.chunks_exact_mut(2)) {
            frame[0] += self.channels[0].tick(*x);
            frame[1] += self.channels[1].tick(*x);
        }
    }
}

/// Run `block` through a fresh reverberator.
pub fn reverb_process(mut block: AudioBlock, wet: f32) -> AudioBlock {
    let mut r = Reverb::new(block.sample_rate());
    r.process(&mut block, wet);
    block
}
