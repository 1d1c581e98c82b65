//! Engine configuration file (JSON).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{Preset, DEFAULT_BLOCK_SIZE, DEFAULT_SAMPLE_RATE};
use crate::event::InstrumentId;
use crate::io::sensor::LineParser;
use crate::instruments::{
    AirHarp, AirHarpParams, DrumPads, DrumPadsParams, Handheld, HandheldParams, Headband, HeadbandParams, Instrument,
    InstrumentKind, TouchSynth, TouchSynthParams,
};
use crate::sequencer::StepPattern;
use crate::sync::{SyncRole, DEFAULT_KEEPALIVE_MS, DEFAULT_PORT};
use crate::theory::{ContextStore, PitchClass, Scale, ScaleTable, TEMPO_MAX, TEMPO_MIN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, reason: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.to_string(),
        }
    }

    /// Config key the error points at.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { path, .. } => Some(path),
            ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub key: i64,
    pub scale: u32,
    pub tempo: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            key: 0,
            scale: 0,
            tempo: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentConfig {
    pub kind: InstrumentKind,
    /// Synth preset id; ignored by drum pads.
    #[serde(default)]
    pub preset: Option<u32>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl InstrumentConfig {
    fn new(kind: InstrumentKind, preset: Option<u32>) -> Self {
        InstrumentConfig {
            kind,
            preset,
            params: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncConfig {
    pub role: SyncRole,
    pub port: u16,
    pub broadcast_addr: String,
    pub keepalive_ms: u64,
    /// Client only: start with reception turned off.
    #[serde(rename = "override")]
    pub override_on: bool,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            role: SyncRole::Off,
            port: DEFAULT_PORT,
            broadcast_addr: "255.255.255.255".into(),
            keepalive_ms: DEFAULT_KEEPALIVE_MS,
            override_on: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidiInputConfig {
    /// Raw MIDI byte source, e.g. `/dev/snd/midiC1D0` or a FIFO.
    pub path: PathBuf,
    #[serde(default = "default_midi_id")]
    pub instrument: String,
    #[serde(default)]
    pub channel: Option<u8>,
    #[serde(default)]
    pub preset: u32,
}

fn default_midi_id() -> String {
    "midi".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    /// Read sensor lines from standard input.
    pub stdin: bool,
    /// Bind address for sensor-line datagrams, e.g. `0.0.0.0:9100`.
    pub udp: Option<String>,
    /// Bind address for the control-surface WebSocket, e.g. `127.0.0.1:8080`.
    pub ws: Option<String>,
    pub midi: Option<MidiInputConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioOutput {
    /// Discard, paced at real time.
    #[default]
    Null,
    /// Signed 16-bit little-endian stereo to `path` or standard output.
    Raw,
    Wav,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub output: AudioOutput,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub sample_rate: u32,
    pub block_size: usize,
    pub seed: u64,
    pub context: ContextConfig,
    pub scales: Vec<Scale>,
    pub presets: Vec<Preset>,
    pub instruments: BTreeMap<String, InstrumentConfig>,
    /// Initial drum pattern.
    pub pattern: Option<StepPattern>,
    pub sync: SyncConfig,
    pub transports: TransportConfig,
    pub audio: AudioConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let instruments = [
            ("touch1", InstrumentConfig::new(InstrumentKind::TouchSynth, Some(0))),
            ("pads", InstrumentConfig::new(InstrumentKind::DrumPads, None)),
            ("head", InstrumentConfig::new(InstrumentKind::Headband, Some(1))),
            ("hand", InstrumentConfig::new(InstrumentKind::Handheld, Some(2))),
            ("harp", InstrumentConfig::new(InstrumentKind::AirHarp, Some(5))),
        ]
        .into_iter()
        .map(|(id, c)| (id.to_string(), c))
        .collect();
        EngineConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            block_size: DEFAULT_BLOCK_SIZE,
            seed: 1,
            context: ContextConfig::default(),
            scales: ScaleTable::shipped().iter().map(|s| (**s).clone()).collect(),
            presets: Preset::shipped(),
            instruments,
            pattern: None,
            sync: SyncConfig::default(),
            transports: TransportConfig::default(),
            audio: AudioConfig::default(),
        }
    }
}

/// Deserialize, collecting the paths of unrecognized keys and pointing
/// errors at the offending key.
fn parse_with_warnings<'de, T, D>(de: D, prefix: &str, warnings: &mut Vec<String>) -> Result<T, ConfigError>
where
    T: Deserialize<'de>,
    D: serde::Deserializer<'de>,
{
    let join = |p: String| match (prefix.is_empty(), p.as_str()) {
        (true, _) => p,
        (false, "" | ".") => prefix.to_string(),
        (false, _) => format!("{prefix}.{p}"),
    };
    let mut unknown = Vec::new();
    let mut record = |path: serde_ignored::Path<'_>| unknown.push(path.to_string());
    let ignored = serde_ignored::Deserializer::new(de, &mut record);
    let result = serde_path_to_error::deserialize(ignored).map_err(|e| ConfigError::Parse {
        path: join(e.path().to_string()),
        message: e.inner().to_string(),
    });
    warnings.extend(unknown.into_iter().map(join));
    result
}

fn parse_params<T: DeserializeOwned + Default>(
    value: &serde_json::Value,
    key: &str,
    warnings: &mut Vec<String>,
) -> Result<T, ConfigError> {
    if value.is_null() {
        return Ok(T::default());
    }
    parse_with_warnings(value.clone(), key, warnings)
}

impl EngineConfig {
    /// Parse and validate. Unknown keys are returned as warnings.
    pub fn from_json(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let mut warnings = Vec::new();
        let mut de = serde_json::Deserializer::from_str(text);
        let config: EngineConfig = parse_with_warnings(&mut de, "", &mut warnings)?;
        de.end().map_err(|e| ConfigError::Parse {
            path: ".".into(),
            message: e.to_string(),
        })?;
        config.validate(&mut warnings)?;
        Ok((config, warnings))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn scale_table(&self) -> Result<ScaleTable, ConfigError> {
        ScaleTable::new(self.scales.clone()).map_err(|e| ConfigError::invalid("scales", e))
    }

    pub fn context_store(&self) -> Result<ContextStore, ConfigError> {
        let table = Arc::new(self.scale_table()?);
        let key = PitchClass::new(self.context.key).map_err(|e| ConfigError::invalid("context.key", e))?;
        ContextStore::new(table, key, self.context.scale, self.context.tempo).map_err(|e| {
            let key = if self.table_has(self.context.scale) {
                "context.tempo"
            } else {
                "context.scale"
            };
            ConfigError::invalid(key, e)
        })
    }

    fn table_has(&self, id: u32) -> bool {
        self.scales.iter().any(|s| s.id == id)
    }

    pub fn preset(&self, id: u32) -> Option<&Preset> {
        self.presets.iter().find(|p| p.id == id)
    }

    pub fn validate(&self, warnings: &mut Vec<String>) -> Result<(), ConfigError> {
        if !(8_000..=192_000).contains(&self.sample_rate) {
            return Err(ConfigError::invalid("sample_rate", "must be within 8000..=192000"));
        }
        if !(16..=8192).contains(&self.block_size) {
            return Err(ConfigError::invalid("block_size", "must be within 16..=8192"));
        }
        self.context_store()?;
        if !(TEMPO_MIN..=TEMPO_MAX).contains(&self.context.tempo) {
            return Err(ConfigError::invalid("context.tempo", "outside [20, 300] BPM"));
        }
        let mut ids = HashSet::new();
        for (i, p) in self.presets.iter().enumerate() {
            p.validate().map_err(|e| ConfigError::invalid(format!("presets[{i}]"), e))?;
            if !ids.insert(p.id) {
                return Err(ConfigError::invalid(format!("presets[{i}].id"), format!("duplicate id {}", p.id)));
            }
        }
        if self.instruments.is_empty() {
            return Err(ConfigError::invalid("instruments", "at least one instrument is required"));
        }
        let pads = self
            .instruments
            .values()
            .filter(|c| c.kind == InstrumentKind::DrumPads)
            .count();
        if pads > 1 {
            return Err(ConfigError::invalid("instruments", "at most one drum_pads instrument"));
        }
        for (id, c) in &self.instruments {
            if c.kind != InstrumentKind::DrumPads {
                let preset = c.preset.unwrap_or(0);
                if self.preset(preset).is_none() {
                    return Err(ConfigError::invalid(
                        format!("instruments.{id}.preset"),
                        format!("unknown preset {preset}"),
                    ));
                }
            }
            self.build_instrument(id, c, warnings)?;
        }
        if let Some(m) = &self.transports.midi {
            if self.preset(m.preset).is_none() {
                return Err(ConfigError::invalid(
                    "transports.midi.preset",
                    format!("unknown preset {}", m.preset),
                ));
            }
            if m.channel.is_some_and(|c| c > 15) {
                return Err(ConfigError::invalid("transports.midi.channel", "must be 0..=15"));
            }
            if self.instruments.contains_key(&m.instrument) {
                return Err(ConfigError::invalid(
                    "transports.midi.instrument",
                    "id already used by a configured instrument",
                ));
            }
        }
        if self.sync.keepalive_ms == 0 {
            return Err(ConfigError::invalid("sync.keepalive_ms", "must be positive"));
        }
        if self.audio.output == AudioOutput::Wav && self.audio.path.is_none() {
            return Err(ConfigError::invalid("audio.path", "required for wav output"));
        }
        Ok(())
    }

    fn build_instrument(
        &self,
        id: &str,
        c: &InstrumentConfig,
        warnings: &mut Vec<String>,
    ) -> Result<Instrument, ConfigError> {
        let key = format!("instruments.{id}.params");
        let iid = InstrumentId::new(id);
        Ok(match c.kind {
            InstrumentKind::TouchSynth => {
                let p: TouchSynthParams = parse_params(&c.params, &key, warnings)?;
                Instrument::TouchSynth(TouchSynth::new(iid, p))
            }
            InstrumentKind::DrumPads => {
                let p: DrumPadsParams = parse_params(&c.params, &key, warnings)?;
                Instrument::DrumPads(DrumPads::new(iid, p))
            }
            InstrumentKind::Headband => {
                let p: HeadbandParams = parse_params(&c.params, &key, warnings)?;
                if p.yaw_span <= 0.0 || p.reverb_span <= 0.0 || p.degree_span < 0 {
                    return Err(ConfigError::invalid(key, "spans must be positive"));
                }
                Instrument::Headband(Headband::new(iid, p))
            }
            InstrumentKind::Handheld => {
                let p: HandheldParams = parse_params(&c.params, &key, warnings)?;
                if !(p.dead_zone >= 0.0 && p.tilt_span > p.dead_zone) {
                    return Err(ConfigError::invalid(key, "tilt_span must exceed dead_zone >= 0"));
                }
                Instrument::Handheld(Handheld::new(iid, p))
            }
            InstrumentKind::AirHarp => {
                let p: AirHarpParams = parse_params(&c.params, &key, warnings)?;
                if p.columns == 0 || p.rows == 0 || p.refractory_ms < 0.0 || p.note_ms < 0.0 {
                    return Err(ConfigError::invalid(key, "grid must be non-empty and times >= 0"));
                }
                Instrument::AirHarp(AirHarp::new(iid, p, self.sample_rate))
            }
        })
    }

    /// Instrument models in id order.
    pub fn build_instruments(&self) -> Result<Vec<Instrument>, ConfigError> {
        let mut ignored = Vec::new();
        self.instruments
            .iter()
            .map(|(id, c)| self.build_instrument(id, c, &mut ignored))
            .collect()
    }

    /// Sensor line parser for the configured instruments.
    pub fn line_parser(&self) -> LineParser {
        LineParser::new(self.instruments.iter().map(|(id, c)| (id.as_str(), c.kind)))
    }

    pub fn drum_pads_params(&self) -> Option<DrumPadsParams> {
        self.instruments
            .values()
            .find(|c| c.kind == InstrumentKind::DrumPads)
            .map(|c| serde_json::from_value(c.params.clone()).unwrap_or_default())
    }
}
