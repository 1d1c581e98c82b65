//! Drum pads, rate strip and buttons of the interactive drum sequencer.

use serde::{Deserialize, Serialize};

use super::{Command, InstrumentError, Output, SensorPayload};
use crate::event::InstrumentId;
use crate::sequencer::{strip_to_tempo, PadMode, TRACKS};

pub const BUTTON_DRY_WET: u32 = 0;
pub const BUTTON_RECORD: u32 = 1;
pub const BUTTON_TRANSPORT: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrumPadsParams {
    /// Pad mode at startup.
    pub mode: PadMode,
    /// Start the transport with the engine.
    pub autoplay: bool,
}

impl Default for DrumPadsParams {
    fn default() -> Self {
        DrumPadsParams {
            mode: PadMode::Immediate,
            autoplay: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DrumPads {
    pub id: InstrumentId,
    params: DrumPadsParams,
    mode: PadMode,
}

impl DrumPads {
    pub fn new(id: InstrumentId, params: DrumPadsParams) -> Self {
        DrumPads {
            id,
            mode: params.mode,
            params,
        }
    }

    pub fn params(&self) -> &DrumPadsParams {
        &self.params
    }

    pub fn mode(&self) -> PadMode {
        self.mode
    }

    pub fn handle(&mut self, payload: &SensorPayload) -> Result<Output, InstrumentError> {
        let mut out = Output::default();
        let command = match *payload {
            SensorPayload::PadPressure { pad, pressure } => {
                if pad as usize >= TRACKS {
                    return Err(InstrumentError::PadIndex(pad));
                }
                if !(0.0..=1.0).contains(&pressure) {
                    return Err(InstrumentError::Range { field: "pressure", value: pressure });
                }
                Some(Command::PadHit {
                    track: pad as usize,
                    pressure,
                    mode: self.mode,
                })
            }
            SensorPayload::Strip { position } => {
                if !(0.0..=1.0).contains(&position) {
                    return Err(InstrumentError::Range { field: "position", value: position });
                }
                Some(Command::SetTempo(strip_to_tempo(position as f64)))
            }
            SensorPayload::Button { id, pressed } => {
                let command = match id {
                    BUTTON_DRY_WET => Some(Command::ToggleDryWet),
                    BUTTON_TRANSPORT => Some(Command::ToggleTransport),
                    BUTTON_RECORD => None,
                    other => return Err(InstrumentError::Button(other)),
                };
                if !pressed {
                    return Ok(out);
                }
                if id == BUTTON_RECORD {
                    self.mode = match self.mode {
                        PadMode::Immediate => PadMode::Record,
                        PadMode::Record => PadMode::Immediate,
                    };
                }
                command
            }
            _ => unreachable!("payload class checked by Instrument::handle"),
        };
        if let Some(c) = command {
            out.commands.push((self.id.clone(), c));
        }
        Ok(out)
    }
}
