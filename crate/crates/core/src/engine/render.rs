//! Block renderer: synth channels, drum machine, reverb bus, master clip.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Controller, RenderCmd, TimedCmd};
use crate::config::EngineConfig;
use crate::dsp::drums::DrumKit;
use crate::dsp::reverb::Reverb;
use crate::dsp::synth::{Preset, Synth};
use crate::dsp::{cutoff_from_control, midi_to_hz, soft_clip};
use crate::event::{Controller as Ctl, EventKind, InstrumentId};
use crate::sequencer::{Sequencer, StepPattern, StepTrigger};

/// Master level ahead of the soft clipper.
pub const MASTER_GAIN: f32 = 0.5;

/// State changes the renderer reports back to the control side.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Step(usize),
    /// Block peak per channel after the master clip.
    Meter { left: f32, right: f32 },
    Pattern(StepPattern),
    Transport(bool),
    DryWet(bool),
}

/// One line of the note log written next to rendered audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Context {
        frame: u64,
        key: u8,
        scale_id: u32,
        tempo_bpm: f64,
    },
    NoteOn {
        frame: u64,
        source: String,
        pitch: u8,
        velocity: u8,
    },
    NoteOff {
        frame: u64,
        source: String,
        pitch: u8,
    },
    Drum {
        frame: u64,
        track: usize,
        step: usize,
        cutoff: Option<f32>,
    },
}

impl LogEntry {
    pub fn frame(&self) -> u64 {
        match self {
            LogEntry::Context { frame, .. }
            | LogEntry::NoteOn { frame, .. }
            | LogEntry::NoteOff { frame, .. }
            | LogEntry::Drum { frame, .. } => *frame,
        }
    }
}

struct Channel {
    id: InstrumentId,
    synth: Synth,
    preset: usize,
    send: Option<f32>,
    glide: Option<f32>,
    last_pitch: Option<u8>,
}

impl Channel {
    fn update_glide(&mut self) {
        // glide spans one octave centred on the last played note
        let hz = match (self.glide, self.last_pitch) {
            (Some(v), Some(p)) => Some(midi_to_hz(p as f64) * 2f64.powf(2.0 * v as f64 - 1.0)),
            _ => None,
        };
        self.synth.set_glide(hz);
    }
}

pub struct Renderer {
    sample_rate: u32,
    presets: Arc<Vec<Preset>>,
    channels: Vec<Channel>,
    drums: DrumKit,
    sequencer: Sequencer,
    reverb: Reverb,
    frame: u64,
    mono: Vec<f32>,
    send: Vec<f32>,
    triggers: Vec<StepTrigger>,
    log: Option<Vec<LogEntry>>,
    reports: Vec<Report>,
    last_step: Option<usize>,
}

impl Renderer {
    pub fn new(config: &EngineConfig, controller: &Controller) -> Self {
        let presets = controller.presets().clone();
        let channels = controller
            .synth_sources()
            .enumerate()
            .map(|(i, (id, preset))| Channel {
                id: id.clone(),
                synth: Synth::new(presets[preset].clone(), config.sample_rate, config.seed.wrapping_add(i as u64 + 1)),
                preset,
                send: None,
                glide: None,
                last_pitch: None,
            })
            .collect();
        let mut sequencer = Sequencer::new(config.sample_rate, controller.context().tempo_bpm);
        if let Some(p) = &config.pattern {
            sequencer.set_pattern(p.clone());
        }
        Renderer {
            sample_rate: config.sample_rate,
            presets,
            channels,
            drums: DrumKit::new(config.sample_rate, config.seed),
            sequencer,
            reverb: Reverb::new(config.sample_rate),
            frame: 0,
            mono: vec![0.0; config.block_size],
            send: vec![0.0; config.block_size],
            triggers: Vec::with_capacity(64),
            log: None,
            reports: Vec::with_capacity(64),
            last_step: None,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Keep a note log from now on.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn take_log(&mut self) -> Vec<LogEntry> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Frames rendered so far.
    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn sequencer(&self) -> &Sequencer {
        &self.sequencer
    }

    pub fn reports(&mut self) -> std::vec::Drain<'_, Report> {
        self.reports.drain(..)
    }

    fn log(&mut self, e: LogEntry) {
        if let Some(l) = &mut self.log {
            l.push(e);
        }
    }

    /// Render one interleaved stereo block, applying every pending command
    /// due inside it at its exact frame. `pending` must be sorted by `at`;
    /// commands already late are applied at the block start.
    pub fn render(&mut self, pending: &mut VecDeque<TimedCmd>, out: &mut [f32]) {
        let frames = out.len() / 2;
        if self.mono.len() < frames {
            self.mono.resize(frames, 0.0);
            self.send.resize(frames, 0.0);
        }
        out.fill(0.0);
        let mut pos = 0;
        while pos < frames {
            while pending.front().is_some_and(|c| c.at <= self.frame + pos as u64) {
                let c = pending.pop_front().expect("front exists");
                self.apply(c.cmd, self.frame + pos as u64);
            }
            let stop = pending
                .front()
                .map(|c| (c.at - self.frame) as usize)
                .unwrap_or(frames)
                .min(frames);
            self.triggers.clear();
            self.sequencer.advance_into(stop - pos, &mut self.triggers);
            let mut at = pos;
            for i in 0..self.triggers.len() {
                let t = self.triggers[i];
                self.mix(out, at, pos + t.offset);
                at = pos + t.offset;
                self.drums.trigger(t.kind, 1.0, t.cutoff);
                self.log(LogEntry::Drum {
                    frame: self.frame + at as u64,
                    track: t.kind.track(),
                    step: t.step,
                    cutoff: t.cutoff,
                });
            }
            self.mix(out, at, stop);
            pos = stop;
            let step = self.sequencer.transport().current_step;
            if self.sequencer.transport().playing && self.last_step != Some(step) {
                self.last_step = Some(step);
                self.reports.push(Report::Step(step));
            }
        }
        let (mut left, mut right) = (0.0f32, 0.0f32);
        for f in out.chunks_exact_mut(2) {
            f[0] = soft_clip(MASTER_GAIN * f[0]);
            f[1] = soft_clip(MASTER_GAIN * f[1]);
            left = left.max(f[0].abs());
            right = right.max(f[1].abs());
        }
        self.reports.push(Report::Meter { left, right });
        self.frame += frames as u64;
    }

    fn mix(&mut self, out: &mut [f32], a: usize, b: usize) {
        if b <= a {
            return;
        }
        let n = b - a;
        let dst = &mut out[2 * a..2 * b];
        let send = &mut self.send[..n];
        let mono = &mut self.mono[..n];
        send.fill(0.0);
        for ch in &mut self.channels {
            mono.fill(0.0);
            ch.synth.render(mono);
            let level = ch.send.unwrap_or(self.presets[ch.preset].reverb_send);
            for ((m, f), s) in mono.iter().zip(dst.chunks_exact_mut(2)).zip(send.iter_mut()) {
                f[0] += m;
                f[1] += m;
                *s += m * level;
            }
        }
        mono.fill(0.0);
        self.drums.render(mono);
        for (m, f) in mono.iter().zip(dst.chunks_exact_mut(2)) {
            f[0] += m;
            f[1] += m;
        }
        self.reverb.process_send(send, dst);
    }

    fn channel(&mut self, id: &InstrumentId) -> Option<&mut Channel> {
        self.channels.iter_mut().find(|c| &c.id == id)
    }

    fn apply(&mut self, cmd: RenderCmd, frame: u64) {
        match cmd {
            RenderCmd::Event(e) => {
                let source = e.source;
                let Some(ch) = self.channel(&source) else {
                    log::warn!("event for {source} which has no synth");
                    return;
                };
                let entry = match e.kind {
                    EventKind::NoteOn { pitch, velocity } => {
                        ch.synth.note_on(pitch, velocity);
                        ch.last_pitch = Some(pitch);
                        if ch.glide.is_some() {
                            ch.update_glide();
                        }
                        Some(LogEntry::NoteOn {
                            frame,
                            source: source.to_string(),
                            pitch,
                            velocity,
                        })
                    }
                    EventKind::NoteOff { pitch } => {
                        ch.synth.note_off(pitch);
                        Some(LogEntry::NoteOff {
                            frame,
                            source: source.to_string(),
                            pitch,
                        })
                    }
                    EventKind::Control {
                        controller: Ctl::FilterCutoff,
                        value,
                    } => {
                        ch.synth.set_cutoff(Some(cutoff_from_control(value)));
                        None
                    }
                    EventKind::Control {
                        controller: Ctl::ReverbSend,
                        value,
                    } => {
                        ch.send = Some(value);
                        None
                    }
                    EventKind::PitchGlide { value } => {
                        ch.glide = Some(value);
                        ch.update_glide();
                        None
                    }
                };
                if let Some(entry) = entry {
                    self.log(entry);
                }
            }
            RenderCmd::Context {
                key,
                scale_id,
                tempo_bpm,
            } => {
                self.sequencer.set_tempo(tempo_bpm);
                self.log(LogEntry::Context {
                    frame,
                    key,
                    scale_id,
                    tempo_bpm,
                });
            }
            RenderCmd::SetPreset { instrument, preset } => {
                let p = self.presets[preset].clone();
                if let Some(ch) = self.channel(&instrument) {
                    ch.synth.set_preset(p);
                    ch.preset = preset;
                }
            }
            RenderCmd::PadHit { track, pressure, mode } => match self.sequencer.pad_hit(track, pressure, mode) {
                Ok(Some(t)) => {
                    self.drums.trigger(t.kind, 1.0, t.cutoff);
                    self.log(LogEntry::Drum {
                        frame,
                        track,
                        step: t.step,
                        cutoff: t.cutoff,
                    });
                }
                Ok(None) => self.reports.push(Report::Pattern(self.sequencer.pattern().clone())),
                Err(e) => log::warn!("pad hit: {e}"),
            },
            RenderCmd::ToggleDryWet => {
                let wet = self.sequencer.toggle_dry_wet();
                self.reports.push(Report::DryWet(wet));
            }
            RenderCmd::Transport(state) => {
                let playing = self.sequencer.transport().playing;
                match state.unwrap_or(!playing) {
                    true if !playing => self.sequencer.start(),
                    false => self.sequencer.stop(),
                    true => {}
                }
                self.last_step = None;
                self.reports.push(Report::Transport(self.sequencer.transport().playing));
                if self.sequencer.transport().playing {
                    self.reports.push(Report::Pattern(self.sequencer.pattern().clone()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Input;
    use crate::event::EngineEvent;
    use crate::instruments::{SensorFrame, SensorPayload};

    fn setup() -> (Controller, Renderer, VecDeque<TimedCmd>) {
        let config = EngineConfig::default();
        let mut c = Controller::new(&config).unwrap();
        let mut r = Renderer::new(&config, &c);
        r.enable_log();
        let q = c.drain_commands().collect();
        (c, r, q)
    }

    fn block(r: &mut Renderer, q: &mut VecDeque<TimedCmd>) -> Vec<f32> {
        let mut out = vec![0.0; 512];
        r.render(q, &mut out);
        out
    }

    #[test]
    fn note_lands_on_its_frame() {
        let (_, mut r, mut q) = setup();
        // stop the drums so only the note sounds
        q.push_back(TimedCmd {
            at: 0,
            cmd: RenderCmd::Transport(Some(false)),
        });
        q.push_back(TimedCmd {
            at: 100,
            cmd: RenderCmd::Event(EngineEvent::note_on(&"touch1".into(), 100, 69, 127)),
        });
        let out = block(&mut r, &mut q);
        assert!(out[..200].iter().all(|&x| x == 0.0));
        assert!(out[200..].iter().any(|&x| x != 0.0));
        let log = r.take_log();
        assert!(log.contains(&LogEntry::NoteOn {
            frame: 100,
            source: "touch1".into(),
            pitch: 69,
            velocity: 127
        }));
    }

    #[test]
    fn autoplay_fires_step_zero_at_start() {
        let config = EngineConfig {
            pattern: Some({
                let mut p = StepPattern::default();
                p.set(0, 0, crate::sequencer::Step { active: true, pressure: 1.0 }).unwrap();
                p
            }),
            ..EngineConfig::default()
        };
        let mut c = Controller::new(&config).unwrap();
        let mut r = Renderer::new(&config, &c);
        r.enable_log();
        let mut q = c.drain_commands().collect();
        block(&mut r, &mut q);
        let log = r.take_log();
        assert!(matches!(log[1], LogEntry::Drum { frame: 0, track: 0, step: 0, .. }));
        assert!(r.reports().any(|x| x == Report::Step(0)));
    }

    #[test]
    fn output_stays_bounded() {
        let (mut c, mut r, mut q) = setup();
        for i in 0..24 {
            c.handle(
                Input::Frame(SensorFrame::new("touch1", SensorPayload::TouchKey { index: i, on: true })),
                0,
            )
            .unwrap();
        }
        q.extend(c.drain_commands());
        for _ in 0..50 {
            let out = block(&mut r, &mut q);
            assert!(out.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn record_mode_reports_pattern() {
        let (_, mut r, mut q) = setup();
        q.push_back(TimedCmd {
            at: 10,
            cmd: RenderCmd::PadHit {
                track: 1,
                pressure: 0.5,
                mode: crate::sequencer::PadMode::Record,
            },
        });
        block(&mut r, &mut q);
        let pattern = r.reports().find_map(|x| match x {
            Report::Pattern(p) if p.active_count() > 0 => Some(p),
            _ => None,
        });
        assert!(pattern.unwrap().get(1, 0).active);
    }
}
