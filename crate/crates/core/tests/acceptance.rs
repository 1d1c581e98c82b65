//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use ensemble_core::config::EngineConfig;
use ensemble_core::dsp::ks_pluck;
use ensemble_core::engine::{self, Controller, LogEntry, Renderer, ReplayOptions, TimedLine};
use ensemble_core::event::{EngineEvent, EventKind};
use ensemble_core::instruments::{
    AirHarp, AirHarpParams, Headband, HeadbandParams, Instrument, InstrumentKind, SensorPayload, TouchSynth,
    TouchSynthParams,
};
use ensemble_core::io::midi::{self, MidiKind, MidiMessage};
use ensemble_core::io::sensor::LineBody;
use ensemble_core::io::wav::{self, WavSpec};
use ensemble_core::sequencer::{Step, StepPattern, STEPS};
use ensemble_core::sync::osc::{self, OscArg, OscMessage};
use ensemble_core::sync::{ContextMessage, SimulatedNetwork, SyncClient, SyncMaster};
use ensemble_core::theory::{quantize_to_scale, ContextStore, MusicalContext, PitchClass, ScaleTable};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

type Outcome = Result<String, String>;

/// The shipped scale table, written out independently of the library.
const SCALES: [(&str, &[u8]); 8] = [
    ("major", &[0, 2, 4, 5, 7, 9, 11]),
    ("natural_minor", &[0, 2, 3, 5, 7, 8, 10]),
    ("major_pentatonic", &[0, 2, 4, 7, 9]),
    ("minor_pentatonic", &[0, 3, 5, 7, 10]),
    ("dorian", &[0, 2, 3, 5, 7, 9, 10]),
    ("mixolydian", &[0, 2, 4, 5, 7, 9, 10]),
    ("harmonic_minor", &[0, 2, 3, 5, 7, 8, 11]),
    ("chromatic", &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
];

fn in_scale(note: u8, key: u8, scale: usize) -> bool {
    SCALES[scale].1.iter().any(|&i| (key + i) % 12 == note % 12)
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn context(key: u8, scale: usize) -> MusicalContext {
    let table = ScaleTable::shipped();
    MusicalContext::new(
        PitchClass::new(key as i64).unwrap(),
        table.get(scale as u32).unwrap().clone(),
        120.0,
    )
    .unwrap()
}

fn scale_table_matches() -> Result<(), String> {
    let table = ScaleTable::shipped();
    for (id, (name, iv)) in SCALES.iter().enumerate() {
        let s = table.get(id as u32).ok_or(format!("scale {id} missing"))?;
        if s.name != *name || s.intervals() != *iv {
            return Err(format!("shipped scale {id} is {} {:?}", s.name, s.intervals()));
        }
    }
    Ok(())
}

fn random_payload(kind: InstrumentKind, rng: &mut ChaCha8Rng) -> SensorPayload {
    match kind {
        InstrumentKind::TouchSynth => SensorPayload::TouchKey {
            index: rng.random_range(0..24),
            on: rng.random_bool(0.6),
        },
        InstrumentKind::Headband => SensorPayload::orientation(
            rng.random_range(-180.0..180.0),
            rng.random_range(-90.0..90.0),
            rng.random_range(-180.0..180.0),
        ),
        _ => SensorPayload::GridPoint {
            x: rng.random_range(0.0..=1.0),
            y: rng.random_range(0.0..=1.0),
            body: rng.random_range(0..3),
        },
    }
}

fn scale_lock() -> Outcome {
    scale_table_matches()?;
    let start = Instant::now();
    let frames_per_model = 10_000;
    let mut note_ons = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    for scale in 0..SCALES.len() {
        for key in 0..12u8 {
            let ctx = context(key, scale);
            let models = [
                Instrument::TouchSynth(TouchSynth::new("touch".into(), TouchSynthParams::default())),
                Instrument::Headband(Headband::new("head".into(), HeadbandParams::default())),
                Instrument::AirHarp(AirHarp::new("harp".into(), AirHarpParams::default(), 44_100)),
            ];
            for mut model in models {
                let kind = model.kind();
                let mut now = 0u64;
                let mut check = |events: &[EngineEvent]| -> Result<(), String> {
                    for e in events {
                        if let EventKind::NoteOn { pitch, .. } = e.kind {
                            note_ons += 1;
                            if !in_scale(pitch, key, scale) {
                                return Err(format!("{kind:?} played {pitch} in key {key} {}", SCALES[scale].0));
                            }
                        }
                    }
                    Ok(())
                };
                for _ in 0..frames_per_model {
                    now += rng.random_range(0..3000);
                    let payload = random_payload(kind, &mut rng);
                    let out = model.handle(&payload, now, &ctx).map_err(|e| e.to_string())?;
                    check(&out.events)?;
                    check(&model.tick(now).events)?;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s"));
    }
    if note_ons < 100_000 {
        return Err(format!("only {note_ons} note_ons exercised"));
    }
    Ok(format!(
        "{} contexts x 3 models x {frames_per_model} frames, {note_ons} note_ons all in scale, {secs:.1} s",
        SCALES.len() * 12
    ))
}

/// Nearest in-scale note, lower on ties, by exhaustive search.
fn brute_quantize(note: u8, key: u8, scale: usize) -> u8 {
    (0..=127u8)
        .filter(|&m| in_scale(m, key, scale))
        .min_by_key(|&m| ((m as i32 - note as i32).abs(), m))
        .unwrap()
}

fn quantizer_oracle() -> Outcome {
    scale_table_matches()?;
    let mut checked = 0;
    for scale in 0..SCALES.len() {
        for key in 0..12u8 {
            let ctx = context(key, scale);
            for note in 0..=127u8 {
                let got = quantize_to_scale(note, &ctx);
                let want = brute_quantize(note, key, scale);
                if got != want {
                    return Err(format!("q({note}, key {key}, {}) = {got}, oracle {want}", SCALES[scale].0));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} inputs identical to brute-force oracle"))
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Frequency of the largest FFT bin, zero-padded to 2^18 points.
fn fft_peak(x: &[f32], sample_rate: f64) -> f64 {
    let n = 1 << 18;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (bin, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    (bin + 1) as f64 * sample_rate / n as f64
}

fn ks_accuracy() -> Outcome {
    let sr = 44_100;
    let mut report = Vec::new();
    for f in [55.0, 110.0, 220.0, 440.0, 880.0] {
        let x = ks_pluck(f, 1.0, 2.0, sr, 1).map_err(|e| e.to_string())?;
        let peak = fft_peak(&x, sr as f64);
        let err = (peak - f).abs() / f;
        if err >= 0.01 {
            return Err(format!("{f} Hz pluck peaks at {peak:.2} Hz ({:.2}%)", err * 100.0));
        }
        let (a, b) = x.split_at(x.len() / 2);
        let ratio = rms(b) / rms(a);
        if f == 110.0 && ratio >= 0.5 {
            return Err(format!("{f} Hz: second-half RMS ratio {ratio:.3}"));
        }
        report.push(format!("{f}:{:+.2}%/{ratio:.2}", (peak - f) / f * 100.0));
    }
    Ok(format!("peak error / half-RMS ratio {} (decay bound checked at 110 Hz)", report.join(" ")))
}

/// Frames at which the kick fires over `bars` bars with every step active.
fn kick_frames(tempo: f64, bars: usize, sample_rate: u32) -> Vec<u64> {
    let mut pattern = StepPattern::default();
    for s in 0..STEPS {
        pattern.set(0, s, Step { active: true, pressure: 1.0 }).unwrap();
    }
    let config = EngineConfig {
        sample_rate,
        pattern: Some(pattern),
        context: ensemble_core::config::ContextConfig {
            tempo,
            ..Default::default()
        },
        ..EngineConfig::default()
    };
    let mut ctl = Controller::new(&config).unwrap();
    let mut r = Renderer::new(&config, &ctl);
    r.enable_log();
    let mut q = ctl.drain_commands().collect();
    let steps = bars * STEPS;
    let period = 60.0 * sample_rate as f64 / (tempo * 4.0);
    let frames = ((steps as f64 + 0.5) * period) as u64;
    let mut out = vec![0.0; config.block_size * 2];
    let mut kicks = Vec::new();
    while r.frame() < frames {
        r.render(&mut q, &mut out);
        r.reports().for_each(drop);
        kicks.extend(r.take_log().into_iter().filter_map(|e| match e {
            LogEntry::Drum { frame, track: 0, .. } => Some(frame),
            _ => None,
        }));
    }
    kicks
}

fn sequencer_drift() -> Outcome {
    let sr = 44_100;
    let bars = 64;
    let mut report = Vec::new();
    for tempo in [60.0, 120.0, 180.0] {
        let a = kick_frames(tempo, bars, sr);
        let b = kick_frames(tempo, bars, sr);
        if a != b {
            return Err(format!("{tempo} BPM: trigger frames differ between runs"));
        }
        let period = 60.0 * sr as f64 / (tempo * 4.0);
        let steps = bars * STEPS;
        if a.len() < steps + 1 {
            return Err(format!("{tempo} BPM: {} triggers for {steps} steps", a.len()));
        }
        let worst = a
            .iter()
            .enumerate()
            .map(|(k, &f)| (f as f64 - k as f64 * period).abs())
            .fold(0.0, f64::max);
        let total = (a[steps] - a[0]) as f64;
        let ideal = steps as f64 * period;
        if worst >= 1.0 || (total - ideal).abs() >= 1.0 {
            return Err(format!("{tempo} BPM: worst step error {worst:.3}, total {total} vs {ideal:.3}"));
        }
        report.push(format!("{tempo}: {total} vs {ideal:.2}"));
    }
    Ok(format!("64 bars, frames vs ideal {}; repeat runs identical", report.join(", ")))
}

fn sync_convergence() -> Outcome {
    let table = std::sync::Arc::new(ScaleTable::shipped());
    let n = 5;
    let keepalive = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // client n is overridden and must never move
    let mut net = SimulatedNetwork::new(n + 1, 0.2, 3, 99);
    let mut stores: Vec<ContextStore> = (0..=n)
        .map(|_| ContextStore::new(table.clone(), PitchClass::C, 0, 120.0).unwrap())
        .collect();
    let mut clients: Vec<SyncClient> = (0..=n).map(|_| SyncClient::new(table.clone())).collect();
    clients[n].set_override(true);
    let initial = ContextMessage::from_context(stores[0].current());
    let mut master = SyncMaster::new(initial, keepalive);
    let mut now = 0u64;
    let mut worst = 0u64;
    let changes = 100;
    for change in 0..changes {
        let msg = loop {
            let m = ContextMessage {
                key: rng.random_range(0..12),
                scale_id: rng.random_range(0..table.len() as u32),
                tempo_bpm: rng.random_range(60..=180),
            };
            if m != master.current() {
                break m;
            }
        };
        master.set_context(msg);
        let changed_at = now;
        let mut converged = vec![None; n];
        let next_change = now + rng.random_range(2_100..4_000);
        while now < next_change {
            net.set_time(now);
            while master.poll(now, &mut net).map_err(|e| e.to_string())? {}
            for (c, client) in clients.iter_mut().enumerate() {
                for p in net.deliver(c, now) {
                    client.apply(&p, now, &mut stores[c]);
                }
            }
            for c in 0..n {
                if converged[c].is_none() && msg.matches(stores[c].current()) {
                    converged[c] = Some(now - changed_at);
                }
            }
            now += 1;
        }
        for (c, t) in converged.iter().enumerate() {
            match t {
                Some(t) if *t <= 2 * keepalive => worst = worst.max(*t),
                Some(t) => return Err(format!("change {change}: client {c} took {t} ms")),
                None => return Err(format!("change {change}: client {c} never converged")),
            }
        }
        if stores[n].revision() != 0 {
            return Err("overridden client changed context".into());
        }
    }
    let (sent, dropped) = net.stats();
    Ok(format!(
        "{changes} changes, {n} clients, {:.1}% loss, worst convergence {worst} ms; overridden client unchanged ({} packets counted)",
        100.0 * dropped as f64 / sent as f64,
        clients[n].counters().overridden
    ))
}

fn osc_message() -> impl Strategy<Value = OscMessage> {
    let arg = prop_oneof![
        any::<i32>().prop_map(OscArg::Int),
        any::<f32>().prop_filter("NaN", |f| !f.is_nan()).prop_map(OscArg::Float),
        "[ -~]{0,12}".prop_map(OscArg::String),
    ];
    ("(/[a-z0-9_]{1,8}){1,4}", prop::collection::vec(arg, 0..6)).prop_map(|(a, args)| OscMessage::new(&a, args))
}

fn rosc_args(m: &OscMessage) -> Vec<rosc::OscType> {
    m.args
        .iter()
        .map(|a| match a {
            OscArg::Int(i) => rosc::OscType::Int(*i),
            OscArg::Float(f) => rosc::OscType::Float(*f),
            OscArg::String(s) => rosc::OscType::String(s.clone()),
        })
        .collect()
}

fn midi_message() -> impl Strategy<Value = MidiMessage> {
    (0..4usize, 0..16u8, 0..128u8, 0..128u8).prop_map(|(k, channel, d1, d2)| {
        let kind = [MidiKind::NoteOn, MidiKind::NoteOff, MidiKind::ControlChange, MidiKind::PitchBend][k];
        // a zero-velocity note_on is a note_off on the wire
        let d2 = if kind == MidiKind::NoteOn { d2.max(1) } else { d2 };
        MidiMessage {
            kind,
            channel,
            data1: d1,
            data2: d2,
        }
    })
}

/// Reference decode of one canonical message.
fn midly_decode(bytes: &[u8]) -> Option<MidiMessage> {
    use midly::live::LiveEvent;
    use midly::MidiMessage as M;
    let LiveEvent::Midi { channel, message } = LiveEvent::parse(bytes).ok()? else {
        return None;
    };
    let channel = channel.as_int();
    Some(match message {
        M::NoteOn { key, vel } if vel.as_int() == 0 => MidiMessage {
            kind: MidiKind::NoteOff,
            channel,
            data1: key.as_int(),
            data2: 0,
        },
        M::NoteOn { key, vel } => MidiMessage {
            kind: MidiKind::NoteOn,
            channel,
            data1: key.as_int(),
            data2: vel.as_int(),
        },
        M::NoteOff { key, vel } => MidiMessage {
            kind: MidiKind::NoteOff,
            channel,
            data1: key.as_int(),
            data2: vel.as_int(),
        },
        M::Controller { controller, value } => MidiMessage {
            kind: MidiKind::ControlChange,
            channel,
            data1: controller.as_int(),
            data2: value.as_int(),
        },
        M::PitchBend { bend } => {
            let v = bend.0.as_int();
            MidiMessage {
                kind: MidiKind::PitchBend,
                channel,
                data1: (v & 0x7F) as u8,
                data2: (v >> 7) as u8,
            }
        }
        _ => return None,
    })
}

fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn render_bytes(config: &EngineConfig, lines: &[TimedLine]) -> Result<(Vec<u8>, Vec<LogEntry>), String> {
    let mut samples = Vec::new();
    let summary = engine::render_replay(config, lines, ReplayOptions::default(), &mut |b| {
        samples.extend_from_slice(b);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    if !summary.rejected.is_empty() {
        return Err(format!("replay lines rejected: {:?}", summary.rejected));
    }
    let bytes = wav::encode(WavSpec::new(config.sample_rate, 2).unwrap(), &samples).map_err(|e| e.to_string())?;
    Ok((bytes, summary.log))
}

fn load_replay() -> Result<(EngineConfig, Vec<TimedLine>), String> {
    let (config, _) = EngineConfig::load(&data("ensemble.json")).map_err(|e| e.to_string())?;
    let file = std::fs::File::open(data("ensemble.replay")).map_err(|e| e.to_string())?;
    let lines = engine::parse_replay(std::io::BufReader::new(file), &config.line_parser()).map_err(|e| e.to_string())?;
    Ok((config, lines))
}

fn codecs() -> Outcome {
    let cases = 10_000;
    run_cases(cases, osc_message(), |m| {
        let bytes = osc::encode(&m).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(bytes.len() % 4, 0);
        prop_assert_eq!(&osc::decode(&bytes).unwrap(), &m);
        let reference = rosc::encoder::encode(&rosc::OscPacket::Message(rosc::OscMessage {
            addr: m.address.clone(),
            args: rosc_args(&m),
        }))
        .unwrap();
        prop_assert_eq!(&bytes, &reference);
        Ok(())
    })
    .map_err(|e| format!("osc round trip: {e}"))?;
    run_cases(cases, prop::collection::vec(any::<u8>(), 0..96), |bytes| {
        if let Ok(m) = osc::decode(&bytes) {
            prop_assert_eq!(osc::encode(&m).unwrap(), bytes);
        }
        Ok(())
    })
    .map_err(|e| format!("osc fuzz: {e}"))?;
    run_cases(cases, prop::collection::vec(midi_message(), 1..12), |msgs| {
        let bytes: Vec<u8> = msgs.iter().flat_map(|m| m.to_bytes()).collect();
        prop_assert_eq!(&midi::parse(&bytes), &msgs);
        for m in &msgs {
            prop_assert_eq!(midly_decode(&m.to_bytes()), Some(*m));
        }
        Ok(())
    })
    .map_err(|e| format!("midi round trip: {e}"))?;
    run_cases(
        cases,
        (prop::collection::vec(any::<u8>(), 0..64), midi_message()),
        |(garbage, m)| {
            let mut bytes = garbage;
            bytes.extend_from_slice(&m.to_bytes());
            let parsed = midi::parse(&bytes);
            prop_assert_eq!(parsed.last(), Some(&m));
            Ok(())
        },
    )
    .map_err(|e| format!("midi resync: {e}"))?;

    let (config, lines) = load_replay()?;
    let (a, _) = render_bytes(&config, &lines)?;
    let (b, _) = render_bytes(&config, &lines)?;
    if a != b {
        return Err("two renders of the golden replay differ".into());
    }
    let golden_path = data("ensemble.golden.wav");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden_path, &a).map_err(|e| e.to_string())?;
    }
    let golden = std::fs::read(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    if a != golden {
        return Err(format!("render differs from {} ({} vs {} bytes)", golden_path.display(), a.len(), golden.len()));
    }
    Ok(format!(
        "osc, osc fuzz, midi, midi resync: {cases} cases each; golden WAV ({} bytes) identical across two runs",
        a.len()
    ))
}

fn end_to_end() -> Outcome {
    let (config, lines) = load_replay()?;
    let kinds: BTreeSet<String> = lines
        .iter()
        .filter_map(|l| match &l.body {
            LineBody::Frame(f) => Some(format!("{:?}", config.instruments[f.instrument.as_str()].kind)),
            _ => None,
        })
        .collect();
    if kinds.len() != 5 {
        return Err(format!("replay exercises {kinds:?}"));
    }
    let changes: Vec<u64> = lines
        .iter()
        .skip(1)
        .filter(|l| matches!(l.body, LineBody::Context { .. }))
        .map(|l| l.ts)
        .collect();
    if changes.len() != 1 {
        return Err(format!("expected one mid-file context change, found {}", changes.len()));
    }
    let (a, log) = render_bytes(&config, &lines)?;
    let (b, log_b) = render_bytes(&config, &lines)?;
    if a != b || log != log_b {
        return Err("renders differ".into());
    }
    let mut current: Option<(u8, usize)> = None;
    let mut after_change = BTreeSet::new();
    let mut checked = 0;
    for e in &log {
        match e {
            LogEntry::Context { key, scale_id, .. } => current = Some((*key, *scale_id as usize)),
            LogEntry::NoteOn { frame, source, pitch, .. } if *frame >= changes[0] => {
                let (key, scale) = current.ok_or("note before any context")?;
                if !in_scale(*pitch, key, scale) {
                    return Err(format!("{source} played {pitch} at frame {frame}, outside key {key} {}", SCALES[scale].0));
                }
                after_change.insert(source.clone());
                checked += 1;
            }
            _ => {}
        }
    }
    if after_change.len() < 4 {
        return Err(format!("only {after_change:?} played after the change"));
    }
    Ok(format!(
        "5 instruments, change at frame {}, {checked} later note_ons from {} sources all in scale; deterministic",
        changes[0],
        after_change.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("scale-lock", scale_lock),
        ("quantizer-oracle", quantizer_oracle),
        ("ks-pitch", ks_accuracy),
        ("sequencer-drift", sequencer_drift),
        ("sync-convergence", sync_convergence),
        ("codecs", codecs),
        ("end-to-end-replay", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
