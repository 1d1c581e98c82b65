//! Faster-than-real-time rendering of replay files.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use super::{Controller, EngineError, Input, LogEntry, Renderer, TimedCmd};
use crate::config::EngineConfig;
use crate::io::sensor::{LineBody, LineError, LineParser};
use crate::io::wav::{WavError, WavSpec, WavWriter};

/// Tail rendered after the last line when no duration is given.
pub const DEFAULT_TAIL_SECONDS: u64 = 2;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {error}")]
    Parse { line: usize, error: LineError },
    #[error("line {0}: \"ts\" is required in replay files")]
    MissingTimestamp(usize),
    #[error("line {line}: ts {ts} is earlier than the previous line's {prev}")]
    OutOfOrder { line: usize, ts: u64, prev: u64 },
    #[error("reading replay: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing output: {0}")]
    Output(#[from] WavError),
}

/// A replay line with its source line number.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedLine {
    pub line: usize,
    pub ts: u64,
    pub body: LineBody,
}

/// Strict parse: the first bad line aborts with its line number.
pub fn parse_replay<R: BufRead>(reader: R, parser: &LineParser) -> Result<Vec<TimedLine>, ReplayError> {
    let mut out: Vec<TimedLine> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let n = n + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parsed = parser.parse(&line).map_err(|error| ReplayError::Parse { line: n, error })?;
        let ts = parsed.ts.ok_or(ReplayError::MissingTimestamp(n))?;
        if let Some(prev) = out.last().map(|l| l.ts).filter(|&p| ts < p) {
            return Err(ReplayError::OutOfOrder { line: n, ts, prev });
        }
        out.push(TimedLine {
            line: n,
            ts,
            body: parsed.body,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReplayOptions {
    /// Total length in frames; overrides the tail rule.
    pub duration: Option<u64>,
    /// Frames after the last line, `None` for two seconds.
    pub tail: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySummary {
    pub frames: u64,
    pub log: Vec<LogEntry>,
    /// Lines the engine refused, with the reason. Rendering carries on.
    pub rejected: Vec<(usize, String)>,
}

fn to_input(body: &LineBody) -> Input {
    match body {
        LineBody::Frame(f) => Input::Frame(f.clone()),
        LineBody::Context {
            key,
            scale_id,
            tempo_bpm,
        } => Input::SetContext {
            key: *key,
            scale_id: *scale_id,
            tempo_bpm: *tempo_bpm,
        },
    }
}

/// Render `lines` block by block into `sink` (interleaved stereo).
pub fn render_replay(
    config: &EngineConfig,
    lines: &[TimedLine],
    opts: ReplayOptions,
    sink: &mut dyn FnMut(&[f32]) -> Result<(), WavError>,
) -> Result<ReplaySummary, ReplayError> {
    let sr = config.sample_rate as u64;
    let total = match (opts.duration, lines.last()) {
        (Some(d), _) => d,
        (None, None) => 0,
        (None, Some(last)) => last.ts + opts.tail.unwrap_or(DEFAULT_TAIL_SECONDS * sr),
    };
    let mut ctl = Controller::new(config)?;
    let mut renderer = Renderer::new(config, &ctl);
    renderer.enable_log();
    let mut rejected = Vec::new();
    for l in lines {
        if let Err(e) = ctl.handle(to_input(&l.body), l.ts) {
            log::warn!("line {}: {e}", l.line);
            rejected.push((l.line, e.to_string()));
        }
    }
    ctl.tick(total);
    let mut cmds: Vec<TimedCmd> = ctl.drain_commands().collect();
    cmds.sort_by_key(|c| c.at);
    let mut pending: VecDeque<TimedCmd> = cmds.into();
    let mut buf = vec![0.0f32; config.block_size * 2];
    let mut done = 0u64;
    while done < total {
        let n = (total - done).min(config.block_size as u64) as usize;
        renderer.render(&mut pending, &mut buf[..2 * n]);
        renderer.reports().for_each(drop);
        sink(&buf[..2 * n])?;
        done += n as u64;
    }
    Ok(ReplaySummary {
        frames: total,
        log: renderer.take_log(),
        rejected,
    })
}

/// Render straight to a stereo WAV file.
pub fn render_to_wav(
    config: &EngineConfig,
    lines: &[TimedLine],
    opts: ReplayOptions,
    path: &Path,
) -> Result<ReplaySummary, ReplayError> {
    let mut w = WavWriter::create(path, WavSpec::new(config.sample_rate, 2)?)?;
    let summary = render_replay(config, lines, opts, &mut |b| w.write(b))?;
    w.finish()?;
    Ok(summary)
}

/// One JSON object per line.
pub fn write_log<W: Write>(log: &[LogEntry], mut out: W) -> io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> LineParser {
        EngineConfig::default().line_parser()
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\n{\"ts\":0,\"inst\":\"pads\",\"t\":\"pad\",\"i\":0,\"p\":1}\n{\"inst\":\"pads\",\"t\":\"pad\",\"i\":0,\"p\":1}\n";
        assert!(matches!(
            parse_replay(text.as_bytes(), &parser()),
            Err(ReplayError::MissingTimestamp(3))
        ));
        let text = "{\"ts\":10,\"t\":\"context\",\"key\":0,\"scale\":0}\n{\"ts\":5,\"t\":\"context\",\"key\":0,\"scale\":0}\n";
        assert!(matches!(
            parse_replay(text.as_bytes(), &parser()),
            Err(ReplayError::OutOfOrder { line: 2, ts: 5, prev: 10 })
        ));
        let err = parse_replay("\n{oops\n".as_bytes(), &parser()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"));
    }

    fn render(lines: &[TimedLine], opts: ReplayOptions) -> (Vec<f32>, ReplaySummary) {
        let mut out = Vec::new();
        let s = render_replay(&EngineConfig::default(), lines, opts, &mut |b| {
            out.extend_from_slice(b);
            Ok(())
        })
        .unwrap();
        (out, s)
    }

    #[test]
    fn empty_replay_lengths() {
        let (out, s) = render(&[], ReplayOptions::default());
        assert!(out.is_empty());
        assert_eq!(s.frames, 0);
        let (out, _) = render(
            &[],
            ReplayOptions {
                duration: Some(1000),
                tail: None,
            },
        );
        assert_eq!(out.len(), 2000);
    }

    #[test]
    fn rendering_is_deterministic() {
        let text = "{\"ts\":0,\"inst\":\"touch1\",\"t\":\"key\",\"i\":0,\"on\":true}\n\
                    {\"ts\":4410,\"inst\":\"harp\",\"t\":\"grid\",\"x\":0.5,\"y\":0.5}\n\
                    {\"ts\":8000,\"inst\":\"harp\",\"t\":\"grid\",\"x\":7,\"y\":0.5}\n";
        let lines = parse_replay(text.as_bytes(), &parser()).unwrap();
        let opts = ReplayOptions {
            duration: None,
            tail: Some(4410),
        };
        let (a, sa) = render(&lines, opts);
        let (b, _) = render(&lines, opts);
        assert_eq!(a, b);
        assert_eq!(sa.frames, 8000 + 4410);
        assert_eq!(sa.rejected.len(), 1);
        assert_eq!(sa.rejected[0].0, 3);
    }
}
