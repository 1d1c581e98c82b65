//! Newline-delimited JSON sensor protocol, also used for replay files.
//!
//! ```text
//! {"inst":"touch1","t":"key","i":3,"on":true}
//! {"ts":22050,"inst":"head","t":"orient","yaw":30,"pitch":-10,"roll":0}
//! {"ts":44100,"t":"context","key":2,"scale":0,"tempo":120}
//! ```

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::InstrumentId;
use crate::instruments::{InstrumentKind, SensorFrame, SensorPayload};
use crate::theory::PitchClass;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("malformed line: {0}")]
    Json(String),
    #[error("\"inst\" is required for {0:?} lines")]
    MissingInstrument(&'static str),
    #[error("unknown instrument {0:?}")]
    UnknownInstrument(String),
    #[error("instrument {instrument:?} is a {kind:?} and does not take {payload:?} lines")]
    Mismatch {
        instrument: String,
        kind: InstrumentKind,
        payload: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Line-level diagnostic from a stream.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {error}")]
pub struct LineDiagnostic {
    pub line: usize,
    pub error: LineError,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineBody {
    Frame(SensorFrame),
    /// Operator context change (key, scale, optional tempo).
    Context {
        key: PitchClass,
        scale_id: u32,
        tempo_bpm: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLine {
    /// Frame timestamp; required in replay files.
    pub ts: Option<u64>,
    pub body: LineBody,
}

impl SensorLine {
    pub fn frame(ts: Option<u64>, frame: SensorFrame) -> Self {
        SensorLine {
            ts,
            body: LineBody::Frame(frame),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Wire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inst: Option<String>,
    #[serde(flatten)]
    body: WireBody,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
enum WireBody {
    Key {
        i: u32,
        on: bool,
    },
    Pad {
        i: u32,
        p: f32,
    },
    Strip {
        x: f32,
    },
    Orient {
        yaw: f32,
        pitch: f32,
        roll: f32,
    },
    Grid {
        x: f32,
        y: f32,
        #[serde(default)]
        body: u32,
    },
    Button {
        i: u32,
        on: bool,
    },
    Release,
    Context {
        key: i64,
        scale: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tempo: Option<f64>,
    },
}

/// Validates lines against the configured instruments.
#[derive(Debug, Clone, Default)]
pub struct LineParser {
    instruments: BTreeMap<String, InstrumentKind>,
}

impl LineParser {
    pub fn new<'a>(instruments: impl IntoIterator<Item = (&'a str, InstrumentKind)>) -> Self {
        LineParser {
            instruments: instruments.into_iter().map(|(id, k)| (id.to_string(), k)).collect(),
        }
    }

    pub fn kind_of(&self, id: &str) -> Option<InstrumentKind> {
        self.instruments.get(id).copied()
    }

    pub fn parse(&self, line: &str) -> Result<SensorLine, LineError> {
        let wire: Wire = serde_json::from_str(line.trim()).map_err(|e| LineError::Json(e.to_string()))?;
        let payload = match wire.body {
            WireBody::Context { key, scale, tempo } => {
                let key = PitchClass::new(key).map_err(|e| LineError::Invalid(e.to_string()))?;
                return Ok(SensorLine {
                    ts: wire.ts,
                    body: LineBody::Context {
                        key,
                        scale_id: scale,
                        tempo_bpm: tempo,
                    },
                });
            }
            WireBody::Key { i, on } => SensorPayload::TouchKey { index: i, on },
            WireBody::Pad { i, p } => SensorPayload::PadPressure { pad: i, pressure: p },
            WireBody::Strip { x } => SensorPayload::Strip { position: x },
            WireBody::Orient { yaw, pitch, roll } => SensorPayload::orientation(yaw, pitch, roll),
            WireBody::Grid { x, y, body } => SensorPayload::GridPoint { x, y, body },
            WireBody::Button { i, on } => SensorPayload::Button { id: i, pressed: on },
            WireBody::Release => SensorPayload::Release,
        };
        let inst = wire.inst.ok_or(LineError::MissingInstrument(payload.name()))?;
        let kind = self
            .kind_of(&inst)
            .ok_or_else(|| LineError::UnknownInstrument(inst.clone()))?;
        if !kind.accepts(&payload) {
            return Err(LineError::Mismatch {
                instrument: inst,
                kind,
                payload: payload.name(),
            });
        }
        Ok(SensorLine::frame(wire.ts, SensorFrame::new(InstrumentId::new(&inst), payload)))
    }

    /// Parse a whole stream, reporting bad lines to `on_error` and carrying on.
    pub fn read_all<R: BufRead>(
        &self,
        reader: R,
        mut on_error: impl FnMut(LineDiagnostic),
    ) -> std::io::Result<Vec<SensorLine>> {
        let mut out = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            match self.parse(&line) {
                Ok(l) => out.push(l),
                Err(error) => on_error(LineDiagnostic { line: n + 1, error }),
            }
        }
        Ok(out)
    }
}

pub fn to_line(line: &SensorLine) -> String {
    let (inst, body) = match &line.body {
        LineBody::Context {
            key,
            scale_id,
            tempo_bpm,
        } => (
            None,
            WireBody::Context {
                key: key.value() as i64,
                scale: *scale_id,
                tempo: *tempo_bpm,
            },
        ),
        LineBody::Frame(f) => {
            let body = match f.payload {
                SensorPayload::TouchKey { index, on } => WireBody::Key { i: index, on },
                SensorPayload::PadPressure { pad, pressure } => WireBody::Pad { i: pad, p: pressure },
                SensorPayload::Strip { position } => WireBody::Strip { x: position },
                SensorPayload::Orientation { yaw, pitch, roll } => WireBody::Orient { yaw, pitch, roll },
                SensorPayload::GridPoint { x, y, body } => WireBody::Grid { x, y, body },
                SensorPayload::Button { id, pressed } => WireBody::Button { i: id, on: pressed },
                SensorPayload::Release => WireBody::Release,
            };
            (Some(f.instrument.to_string()), body)
        }
    };
    serde_json::to_string(&Wire { ts: line.ts, inst, body }).expect("wire form serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> LineParser {
        LineParser::new([
            ("touch1", InstrumentKind::TouchSynth),
            ("pads", InstrumentKind::DrumPads),
            ("head", InstrumentKind::Headband),
            ("harp", InstrumentKind::AirHarp),
        ])
    }

    fn payload(line: &str) -> SensorPayload {
        match parser().parse(line).unwrap().body {
            LineBody::Frame(f) => f.payload,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pad_line() {
        assert_eq!(
            payload(r#"{"inst":"pads","t":"pad","i":2,"p":0.7}"#),
            SensorPayload::PadPressure { pad: 2, pressure: 0.7 }
        );
    }

    #[test]
    fn orient_line() {
        assert_eq!(
            payload(r#"{"inst":"head","t":"orient","yaw":30,"pitch":-10,"roll":0}"#),
            SensorPayload::Orientation {
                yaw: 30.0,
                pitch: -10.0,
                roll: 0.0
            }
        );
        // angles are wrapped
        assert_eq!(
            payload(r#"{"inst":"head","t":"orient","yaw":350,"pitch":0,"roll":0}"#),
            SensorPayload::orientation(-10.0, 0.0, 0.0)
        );
    }

    #[test]
    fn key_line_with_timestamp() {
        let l = parser().parse(r#"{"ts":512,"inst":"touch1","t":"key","i":3,"on":true}"#).unwrap();
        assert_eq!(l.ts, Some(512));
        assert_eq!(
            l.body,
            LineBody::Frame(SensorFrame::new("touch1", SensorPayload::TouchKey { index: 3, on: true }))
        );
    }

    #[test]
    fn context_line() {
        let l = parser().parse(r#"{"ts":9,"t":"context","key":2,"scale":1}"#).unwrap();
        assert_eq!(
            l.body,
            LineBody::Context {
                key: PitchClass::new(2).unwrap(),
                scale_id: 1,
                tempo_bpm: None
            }
        );
        assert!(matches!(
            parser().parse(r#"{"t":"context","key":12,"scale":1}"#),
            Err(LineError::Invalid(_))
        ));
    }

    #[test]
    fn rejections() {
        let p = parser();
        assert!(matches!(p.parse("{not json"), Err(LineError::Json(_))));
        assert!(matches!(p.parse(r#"{"inst":"pads","t":"pad","i":2}"#), Err(LineError::Json(_))));
        assert!(matches!(p.parse(r#"{"inst":"pads","t":"wobble"}"#), Err(LineError::Json(_))));
        assert_eq!(
            p.parse(r#"{"inst":"nobody","t":"release"}"#),
            Err(LineError::UnknownInstrument("nobody".into()))
        );
        assert_eq!(p.parse(r#"{"t":"release"}"#), Err(LineError::MissingInstrument("release")));
        assert!(matches!(
            p.parse(r#"{"inst":"harp","t":"key","i":1,"on":true}"#),
            Err(LineError::Mismatch { .. })
        ));
    }

    #[test]
    fn stream_continues_after_errors() {
        let text = "{\"inst\":\"pads\",\"t\":\"pad\",\"i\":0,\"p\":1}\ngarbage\n\n# comment\n{\"inst\":\"harp\",\"t\":\"grid\",\"x\":0.5,\"y\":0.5}\n";
        let mut errs = Vec::new();
        let lines = parser().read_all(text.as_bytes(), |d| errs.push(d)).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 2);
    }

    #[test]
    fn serialized_form() {
        let l = SensorLine::frame(
            Some(7),
            SensorFrame::new("pads", SensorPayload::PadPressure { pad: 2, pressure: 0.7 }),
        );
        assert_eq!(to_line(&l), r#"{"ts":7,"inst":"pads","t":"pad","i":2,"p":0.7}"#);
        assert_eq!(parser().parse(&to_line(&l)).unwrap(), l);
    }
}
