//! Trapezoidal state-variable filter, 12 dB/octave.

use std::f32::consts::PI;

use super::AudioBlock;

pub const MIN_CUTOFF: f32 = 20.0;
pub const MAX_CUTOFF: f32 = 18_000.0;

/// Damping at resonance 0 (Butterworth, Q = 1/sqrt 2) and at resonance 1.
const DAMPING_OPEN: f32 = std::f32::consts::SQRT_2;
const DAMPING_MIN: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    LowPass,
    BandPass,
    HighPass,
}

#[derive(Debug, Clone, Copy, Default)]
struct ChannelState {
    ic1: f32,
    ic2: f32,
}

#[derive(Debug, Clone)]
pub struct StateVariableFilter {
    mode: FilterMode,
    sample_rate: f32,
    cutoff: f32,
    resonance: f32,
    a1: f32,
    a2: f32,
    a3: f32,
    k: f32,
    state: [ChannelState; 2],
}

impl StateVariableFilter {
    pub fn new(mode: FilterMode, sample_rate: u32, cutoff: f32, resonance: f32) -> Self {
        let mut f = StateVariableFilter {
            mode,
            sample_rate: sample_rate as f32,
            cutoff: 0.0,
            resonance: -1.0,
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            k: 0.0,
            state: [ChannelState::default(); 2],
        };
        f.set_params(cutoff, resonance);
        f
    }

    pub fn lowpass(sample_rate: u32, cutoff: f32, resonance: f32) -> Self {
        Self::new(FilterMode::LowPass, sample_rate, cutoff, resonance)
    }

    /// Cutoff is clamped to [20, 18000] Hz and below Nyquist; resonance to [0, 1].
    pub fn set_params(&mut self, cutoff: f32, resonance: f32) {
        let cutoff = cutoff
            .clamp(MIN_CUTOFF, MAX_CUTOFF)
            .min(self.sample_rate * 0.49);
        let resonance = resonance.clamp(0.0, 1.0);
        if cutoff == self.cutoff && resonance == self.resonance {
            return;
        }
        self.cutoff = cutoff;
        self.resonance = resonance;
        let g = (PI * cutoff / self.sample_rate).tan();
        self.k = DAMPING_OPEN + (DAMPING_MIN - DAMPING_OPEN) * resonance;
        self.a1 = 1.0 / (1.0 + g * (g + self.k));
        self.a2 = g * self.a1;
        self.a3 = g * self.a2;
    }

    pub fn cutoff(&self) -> f32 {
        self.cutoff
    }

    pub fn reset(&mut self) {
        self.state = [ChannelState::default(); 2];
    }

    #[inline]
    pub fn tick(&mut self, channel: usize, x: f32) -> f32 {
        let st = &mut self.state[channel];
        let v3 = x - st.ic2;
        let v1 = self.a1 * st.ic1 + self.a2 * v3;
        let v2 = st.ic2 + self.a2 * st.ic1 + self.a3 * v3;
        st.ic1 = 2.0 * v1 - st.ic1;
        st.ic2 = 2.0 * v2 - st.ic2;
        match self.mode {
            FilterMode::LowPass => v2,
            FilterMode::BandPass => v1,
            FilterMode::HighPass => x - self.k * v1 - v2,
        }
    }

    pub fn process_mono(&mut self, samples: &mut [f32]) {
        for s in samples.iter_mut() {
            *s = self.tick(0, *s);
        }
    }

    pub fn process_block(&mut self, block: &mut AudioBlock) {
        let channels = block.channels();
        for frame in block.samples_mut().chunks_exact_mut(channels) {
            for (ch, s) in frame.iter_mut().enumerate() {
                *s = self.tick(ch, *s);
            }
        }
    }
}

/// Low-pass `block` through a fresh filter at `cutoff` / `resonance`.
pub fn svf_process(mut block: AudioBlock, cutoff: f32, resonance: f32) -> AudioBlock {
    let mut f = StateVariableFilter::lowpass(block.sample_rate(), cutoff, resonance);
    f.process_block(&mut block);
    block
}
