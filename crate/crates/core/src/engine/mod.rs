//! Control-side state machine and the timed command stream it feeds to the
//! renderer.

pub mod live;
pub mod offline;
pub mod render;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::dsp::Preset;
use crate::event::{EngineEvent, InstrumentId};
use crate::instruments::{Command, Instrument, InstrumentError, InstrumentKind, Output, SensorFrame};
use crate::io::midi::{MidiMapper, MidiMessage};
use crate::sequencer::{PadMode, StepPattern};
use crate::sync::{ClientAction, SyncClient};
use crate::theory::{ContextChanged, ContextStore, MusicalContext, PitchClass, TheoryError};

pub use offline::{parse_replay, render_replay, render_to_wav, write_log, ReplayError, ReplayOptions, ReplaySummary, TimedLine};
pub use live::{line_input, LiveEngine};
pub use render::{LogEntry, Renderer, Report};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown preset {0}")]
    UnknownPreset(u32),
    #[error("unknown instrument {0:?}")]
    UnknownInstrument(String),
    #[error("instrument {0:?} has no synth voice")]
    NoSynth(String),
    #[error("no drum_pads instrument configured")]
    NoPads,
    #[error("engine is not a sync client")]
    NotClient,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything the control side can be asked to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Frame(SensorFrame),
    /// Local context change; `tempo_bpm: None` keeps the current tempo.
    SetContext {
        key: PitchClass,
        scale_id: u32,
        tempo_bpm: Option<f64>,
    },
    SyncPacket(Vec<u8>),
    /// `instrument: None` targets every synth instrument.
    SetPreset {
        instrument: Option<InstrumentId>,
        preset: u32,
    },
    Command(InstrumentId, Command),
    /// `None` toggles.
    SetTransport(Option<bool>),
    SetSyncOverride(bool),
    Midi(MidiMessage),
}

/// Work for the renderer, applied at an exact frame.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderCmd {
    Event(EngineEvent),
    Context { key: u8, scale_id: u32, tempo_bpm: f64 },
    /// Index into the config's preset list.
    SetPreset { instrument: InstrumentId, preset: usize },
    PadHit { track: usize, pressure: f32, mode: PadMode },
    ToggleDryWet,
    Transport(Option<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedCmd {
    pub at: u64,
    pub cmd: RenderCmd,
}

/// Outbound state for UIs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notification {
    Context {
        key: u8,
        key_name: &'static str,
        scale_id: u32,
        scale_name: String,
        tempo_bpm: f64,
        revision: u64,
    },
    Preset {
        instrument: String,
        id: u32,
        name: String,
    },
    Step {
        value: usize,
    },
    Meter {
        left: f32,
        right: f32,
    },
    Pattern(StepPattern),
    Transport {
        playing: bool,
    },
    DryWet {
        wet: bool,
    },
    Sync {
        overridden: bool,
    },
    Error {
        message: String,
    },
}

impl Notification {
    pub fn context(ctx: &MusicalContext, revision: u64) -> Self {
        Notification::Context {
            key: ctx.key.value(),
            key_name: ctx.key.name(),
            scale_id: ctx.scale.id,
            scale_name: ctx.scale.name.clone(),
            tempo_bpm: ctx.tempo_bpm,
            revision,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("notification serializes")
    }

    pub fn from_report(r: &Report) -> Self {
        match r {
            Report::Step(step) => Notification::Step { value: *step },
            Report::Meter { left, right } => Notification::Meter {
                left: *left,
                right: *right,
            },
            Report::Pattern(p) => Notification::Pattern(p.clone()),
            Report::Transport(playing) => Notification::Transport { playing: *playing },
            Report::DryWet(wet) => Notification::DryWet { wet: *wet },
        }
    }
}

/// Owns the shared context and every instrument model. Single writer for
/// context; all inputs pass through [`Controller::handle`] in order.
pub struct Controller {
    store: ContextStore,
    instruments: BTreeMap<InstrumentId, Instrument>,
    presets: Arc<Vec<Preset>>,
    /// Current preset index per synth-backed source.
    preset_of: BTreeMap<InstrumentId, usize>,
    pads: Option<InstrumentId>,
    midi: Option<MidiMapper>,
    sync: Option<SyncClient>,
    sample_rate: u32,
    cmds: Vec<TimedCmd>,
    notes: Vec<Notification>,
}

impl Controller {
    pub fn new(config: &EngineConfig) -> Result<Self, EngineError> {
        let store = config.context_store()?;
        let presets = Arc::new(config.presets.clone());
        let index_of = |id: u32| presets.iter().position(|p| p.id == id).ok_or(EngineError::UnknownPreset(id));
        let mut preset_of = BTreeMap::new();
        let mut instruments = BTreeMap::new();
        let mut pads = None;
        for inst in config.build_instruments()? {
            let id = inst.id().clone();
            let cfg = &config.instruments[id.as_str()];
            if inst.kind() == InstrumentKind::DrumPads {
                pads = Some(id.clone());
            } else {
                preset_of.insert(id.clone(), index_of(cfg.preset.unwrap_or(0))?);
            }
            instruments.insert(id, inst);
        }
        let midi = match &config.transports.midi {
            Some(m) => {
                let id = InstrumentId::new(&m.instrument);
                preset_of.insert(id.clone(), index_of(m.preset)?);
                Some(MidiMapper::new(id, m.channel))
            }
            None => None,
        };
        let sync = (config.sync.role == crate::sync::SyncRole::Client).then(|| {
            let mut c = SyncClient::new(store.table().clone());
            c.set_override(config.sync.override_on);
            c
        });
        let ctx = store.current().clone();
        let mut c = Controller {
            store,
            instruments,
            presets,
            preset_of,
            pads,
            midi,
            sync,
            sample_rate: config.sample_rate,
            cmds: Vec::new(),
            notes: Vec::new(),
        };
        c.push(
            0,
            RenderCmd::Context {
                key: ctx.key.value(),
                scale_id: ctx.scale.id,
                tempo_bpm: ctx.tempo_bpm,
            },
        );
        if config.drum_pads_params().is_some_and(|p| p.autoplay) {
            c.push(0, RenderCmd::Transport(Some(true)));
        }
        Ok(c)
    }

    pub fn context(&self) -> &MusicalContext {
        self.store.current()
    }

    pub fn revision(&self) -> u64 {
        self.store.revision()
    }

    pub fn presets(&self) -> &Arc<Vec<Preset>> {
        &self.presets
    }

    /// Sources with a synth voice, with their starting preset index.
    pub fn synth_sources(&self) -> impl Iterator<Item = (&InstrumentId, usize)> {
        self.preset_of.iter().map(|(id, &p)| (id, p))
    }

    pub fn sync_client(&self) -> Option<&SyncClient> {
        self.sync.as_ref()
    }

    /// Snapshot for a freshly connected UI.
    pub fn snapshot(&self) -> Vec<Notification> {
        let mut out = vec![Notification::context(self.context(), self.revision())];
        for (id, &p) in &self.preset_of {
            out.push(self.preset_note(id, p));
        }
        if let Some(c) = &self.sync {
            out.push(Notification::Sync {
                overridden: c.is_overridden(),
            });
        }
        out
    }

    fn preset_note(&self, id: &InstrumentId, index: usize) -> Notification {
        let p = &self.presets[index];
        Notification::Preset {
            instrument: id.to_string(),
            id: p.id,
            name: p.name.clone(),
        }
    }

    fn push(&mut self, at: u64, cmd: RenderCmd) {
        self.cmds.push(TimedCmd { at, cmd });
    }

    /// Commands produced so far, in production order.
    pub fn drain_commands(&mut self) -> std::vec::Drain<'_, TimedCmd> {
        self.cmds.drain(..)
    }

    pub fn take_notifications(&mut self) -> Vec<Notification> {
        std::mem::take(&mut self.notes)
    }

    /// Let time-driven instruments emit what is due at `now`.
    pub fn tick(&mut self, now: u64) {
        let mut out = Output::default();
        for inst in self.instruments.values_mut() {
            out.extend(inst.tick(now));
        }
        self.absorb(out, now);
    }

    /// Apply one input at frame `now`. Errors leave all state unchanged and
    /// are also queued as an error notification.
    pub fn handle(&mut self, input: Input, now: u64) -> Result<(), EngineError> {
        self.tick(now);
        let r = self.dispatch(input, now);
        if let Err(e) = &r {
            self.notes.push(Notification::Error { message: e.to_string() });
        }
        r
    }

    fn dispatch(&mut self, input: Input, now: u64) -> Result<(), EngineError> {
        match input {
            Input::Frame(frame) => {
                let inst = self
                    .instruments
                    .get_mut(&frame.instrument)
                    .ok_or_else(|| EngineError::UnknownInstrument(frame.instrument.to_string()))?;
                let out = inst.handle(&frame.payload, now, self.store.current())?;
                self.absorb(out, now);
            }
            Input::SetContext {
                key,
                scale_id,
                tempo_bpm,
            } => {
                let tempo = tempo_bpm.unwrap_or(self.store.current().tempo_bpm);
                let change = self.store.set_context(key, scale_id, tempo)?;
                self.context_changed(change, now);
            }
            Input::SyncPacket(bytes) => {
                let client = self.sync.as_mut().ok_or(EngineError::NotClient)?;
                let now_ms = now * 1000 / self.sample_rate as u64;
                match client.receive(&bytes, now_ms) {
                    ClientAction::Apply(msg) => {
                        if let Some(change) = crate::sync::apply_message(&msg, &mut self.store) {
                            self.context_changed(change, now);
                        }
                    }
                    ClientAction::UnknownScale(id) => log::warn!("sync: unknown scale {id}"),
                    ClientAction::Malformed(e) => log::debug!("sync: malformed packet: {e}"),
                    ClientAction::Overridden(_) | ClientAction::Ignored => {}
                }
            }
            Input::SetPreset { instrument, preset } => {
                let index = self
                    .presets
                    .iter()
                    .position(|p| p.id == preset)
                    .ok_or(EngineError::UnknownPreset(preset))?;
                let targets: Vec<InstrumentId> = match instrument {
                    Some(id) if self.preset_of.contains_key(&id) => vec![id],
                    Some(id) if self.instruments.contains_key(&id) => return Err(EngineError::NoSynth(id.to_string())),
                    Some(id) => return Err(EngineError::UnknownInstrument(id.to_string())),
                    None => self.preset_of.keys().cloned().collect(),
                };
                for id in targets {
                    self.set_preset(id, index, now);
                }
            }
            Input::Command(source, cmd) => self.command(source, cmd, now)?,
            Input::SetTransport(state) => {
                self.pads.as_ref().ok_or(EngineError::NoPads)?;
                self.push(now, RenderCmd::Transport(state));
            }
            Input::SetSyncOverride(on) => {
                let client = self.sync.as_mut().ok_or(EngineError::NotClient)?;
                client.set_override(on);
                self.notes.push(Notification::Sync { overridden: on });
            }
            Input::Midi(msg) => {
                if let Some(m) = self.midi.as_mut() {
                    for e in m.map(&msg, now, self.store.current()) {
                        self.cmds.push(TimedCmd {
                            at: e.timestamp,
                            cmd: RenderCmd::Event(e),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn set_preset(&mut self, id: InstrumentId, index: usize, now: u64) {
        self.preset_of.insert(id.clone(), index);
        self.notes.push(self.preset_note(&id, index));
        self.push(now, RenderCmd::SetPreset { instrument: id, preset: index });
    }

    fn command(&mut self, source: InstrumentId, cmd: Command, now: u64) -> Result<(), EngineError> {
        match cmd {
            Command::CycleScale => {
                let change = self.store.cycle_scale();
                self.context_changed(change, now);
            }
            Command::CyclePreset => {
                let current = *self
                    .preset_of
                    .get(&source)
                    .ok_or_else(|| EngineError::NoSynth(source.to_string()))?;
                self.set_preset(source, (current + 1) % self.presets.len(), now);
            }
            Command::SetTempo(bpm) => {
                let change = self.store.set_tempo(bpm)?;
                self.context_changed(change, now);
            }
            Command::PadHit { track, pressure, mode } => self.push(now, RenderCmd::PadHit { track, pressure, mode }),
            Command::ToggleDryWet => self.push(now, RenderCmd::ToggleDryWet),
            Command::ToggleTransport => self.push(now, RenderCmd::Transport(None)),
        }
        Ok(())
    }

    fn context_changed(&mut self, change: ContextChanged, now: u64) {
        let c = &change.current;
        self.push(
            now,
            RenderCmd::Context {
                key: c.key.value(),
                scale_id: c.scale.id,
                tempo_bpm: c.tempo_bpm,
            },
        );
        self.notes.push(Notification::context(c, change.revision));
    }

    fn absorb(&mut self, out: Output, now: u64) {
        for e in out.events {
            self.cmds.push(TimedCmd {
                at: e.timestamp,
                cmd: RenderCmd::Event(e),
            });
        }
        for (source, cmd) in out.commands {
            if let Err(e) = self.command(source, cmd, now) {
                self.notes.push(Notification::Error { message: e.to_string() });
            }
        }
    }
}
