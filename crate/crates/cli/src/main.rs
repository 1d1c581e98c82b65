mod simulate;

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context as _, Result};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use ensemble_core::config::{AudioOutput, ConfigError, EngineConfig};
use ensemble_core::engine::{self, LiveEngine, ReplayOptions};
use ensemble_core::instruments::InstrumentKind;
use ensemble_core::io::audio::{AudioSink, NullSink, RawSink, WavSink};
use ensemble_core::io::sensor::{self, LineBody, SensorLine};
use ensemble_core::io::wav::WavSpec;
use ensemble_core::sync::{self, ClientAction, ContextMessage, SyncClient, SyncMaster, SyncRole, UdpReceiver, UdpSender};
use ensemble_core::theory::PitchClass;

use simulate::{Axis, Pattern};

#[derive(Debug, Parser)]
#[command(name = "engine", version, about = "Scale-locked instrument ensemble engine")]
struct Cli {
    /// Engine config (JSON).
    #[arg(short, long, global = true, env = "ENGINE_CONFIG")]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the live engine until interrupted.
    Run(RunArgs),
    /// Render a replay file to WAV, offline.
    Render(RenderArgs),
    /// Emit scripted sensor lines for one instrument.
    Simulate(SimulateArgs),
    /// Broadcast a context as sync master, without audio.
    SyncMaster(MasterArgs),
    /// Listen for sync packets and print each context adopted.
    SyncClient(ClientArgs),
    ListScales,
    ListPresets,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Role {
    Master,
    Client,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Output {
    Null,
    Raw,
    Wav,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    role: Option<Role>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    broadcast: Option<String>,
    /// Ignore incoming sync (client role).
    #[arg(long = "override")]
    override_sync: bool,
    /// WebSocket listen address for the control UI.
    #[arg(long)]
    ws: Option<String>,
    /// UDP listen address for sensor lines.
    #[arg(long)]
    udp: Option<String>,
    /// Read sensor lines from standard input.
    #[arg(long)]
    stdin: bool,
    #[arg(long, value_enum)]
    output: Option<Output>,
    /// File for raw or wav output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many seconds.
    #[arg(long)]
    seconds: Option<f64>,
}

#[derive(Debug, clap::Args)]
struct RenderArgs {
    replay: PathBuf,
    out: PathBuf,
    /// Total length in seconds (default: last line plus the tail).
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds rendered after the last line.
    #[arg(long)]
    tail: Option<f64>,
    /// Write the note log (JSON lines) here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("script").required(true).args(["sweep", "walk", "pattern"])))]
struct SimulateArgs {
    /// Instrument id from the config.
    instrument: String,
    #[arg(long, value_enum)]
    sweep: Option<Axis>,
    #[arg(long)]
    walk: bool,
    #[arg(long, value_enum)]
    pattern: Option<Pattern>,
    /// Frames to emit (beats for --pattern).
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Spacing of sweep and walk frames.
    #[arg(long, default_value_t = 20.0)]
    interval_ms: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Send each line as a UDP datagram instead of printing.
    #[arg(long)]
    udp: Option<String>,
    /// Pace output by the timestamps.
    #[arg(long)]
    realtime: bool,
}

#[derive(Debug, clap::Args)]
struct MasterArgs {
    #[arg(long)]
    key: Option<i64>,
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    tempo: Option<f64>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    broadcast: Option<String>,
    /// Read context lines from standard input and broadcast each change.
    #[arg(long)]
    stdin: bool,
    #[arg(long)]
    seconds: Option<f64>,
}

#[derive(Debug, clap::Args)]
struct ClientArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    seconds: Option<f64>,
}

/// Bad invocation; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() || e.is::<ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    let Some(path) = path else {
        return Ok(EngineConfig::default());
    };
    let (config, warnings) = EngineConfig::load(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(config)
}

/// Re-check a config after flag overrides.
fn revalidate(config: &EngineConfig) -> Result<()> {
    let mut warnings = Vec::new();
    config.validate(&mut warnings)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Cmd::Run(a) => run(&mut config, a),
        Cmd::Render(a) => render(&config, a),
        Cmd::Simulate(a) => simulate(&config, a),
        Cmd::SyncMaster(a) => sync_master(&mut config, a),
        Cmd::SyncClient(a) => sync_client(&mut config, a),
        Cmd::ListScales => {
            let mut out = io::stdout().lock();
            for s in &config.scales {
                let iv: Vec<String> = s.intervals().iter().map(|i| i.to_string()).collect();
                writeln!(out, "{}\t{}\t{}", s.id, s.name, iv.join(" "))?;
            }
            Ok(())
        }
        Cmd::ListPresets => {
            let mut out = io::stdout().lock();
            for p in &config.presets {
                writeln!(out, "{}\t{}", p.id, p.name)?;
            }
            Ok(())
        }
    }
}

fn seconds(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).map_err(|_| usage(format!("{what} must be a non-negative number of seconds")))
}

/// Set on the first interrupt.
fn interrupt_flag() -> Result<Arc<AtomicBool>> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    Ok(flag)
}

fn wait(limit: Option<Duration>, stop: &AtomicBool, mut each: impl FnMut() -> Result<()>) -> Result<()> {
    let start = Instant::now();
    while !stop.load(Ordering::SeqCst) && limit.is_none_or(|l| start.elapsed() < l) {
        each()?;
        thread::sleep(Duration::from_millis(10));
    }
    Ok(())
}

fn run(config: &mut EngineConfig, a: RunArgs) -> Result<()> {
    if let Some(r) = a.role {
        config.sync.role = match r {
            Role::Master => SyncRole::Master,
            Role::Client => SyncRole::Client,
            Role::Off => SyncRole::Off,
        };
    }
    if let Some(p) = a.port {
        config.sync.port = p;
    }
    if let Some(b) = a.broadcast {
        config.sync.broadcast_addr = b;
    }
    config.sync.override_on |= a.override_sync;
    if a.ws.is_some() {
        config.transports.ws = a.ws;
    }
    if a.udp.is_some() {
        config.transports.udp = a.udp;
    }
    config.transports.stdin |= a.stdin;
    if let Some(o) = a.output {
        config.audio.output = match o {
            Output::Null => AudioOutput::Null,
            Output::Raw => AudioOutput::Raw,
            Output::Wav => AudioOutput::Wav,
        };
    }
    if a.out.is_some() {
        config.audio.path = a.out;
    }
    revalidate(config)?;
    let limit = a.seconds.map(|s| seconds(s, "--seconds")).transpose()?;
    let sink: Box<dyn AudioSink> = match (config.audio.output, &config.audio.path) {
        (AudioOutput::Null, _) => Box::new(NullSink),
        (AudioOutput::Raw, Some(p)) => Box::new(RawSink::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ))),
        (AudioOutput::Raw, None) => Box::new(RawSink::new(io::stdout())),
        (AudioOutput::Wav, p) => {
            let p = p.as_ref().expect("validated");
            Box::new(
                WavSink::create(p, WavSpec::new(config.sample_rate, 2)?)
                    .with_context(|| format!("creating {}", p.display()))?,
            )
        }
    };
    let stop = interrupt_flag()?;
    let engine = LiveEngine::start(config, sink)?;
    let ids: Vec<&str> = config.instruments.keys().map(String::as_str).collect();
    log::info!(
        "engine running: {} Hz, instruments [{}], sync {:?}, ws {}",
        config.sample_rate,
        ids.join(", "),
        config.sync.role,
        engine.ws_addr().map_or("off".to_string(), |a| a.to_string())
    );
    wait(limit, &stop, || Ok(()))?;
    let frames = engine.frames();
    engine.shutdown()?;
    log::info!("stopped after {frames} frames");
    Ok(())
}

fn render(config: &EngineConfig, a: RenderArgs) -> Result<()> {
    let sr = config.sample_rate as f64;
    let frames = |s: f64, what: &str| seconds(s, what).map(|d| (d.as_secs_f64() * sr).round() as u64);
    let opts = ReplayOptions {
        duration: a.duration.map(|s| frames(s, "--duration")).transpose()?,
        tail: a.tail.map(|s| frames(s, "--tail")).transpose()?,
    };
    let file = File::open(&a.replay).with_context(|| format!("opening {}", a.replay.display()))?;
    let lines = engine::parse_replay(io::BufReader::new(file), &config.line_parser())
        .with_context(|| format!("{}", a.replay.display()))?;
    let summary = engine::render_to_wav(config, &lines, opts, &a.out)
        .with_context(|| format!("rendering to {}", a.out.display()))?;
    for (line, e) in &summary.rejected {
        log::warn!("{}:{line}: {e}", a.replay.display());
    }
    if let Some(p) = &a.log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        engine::write_log(&summary.log, BufWriter::new(f))?;
    }
    log::info!(
        "rendered {} frames ({:.2} s) from {} lines to {}",
        summary.frames,
        summary.frames as f64 / sr,
        lines.len(),
        a.out.display()
    );
    Ok(())
}

fn simulate(config: &EngineConfig, a: SimulateArgs) -> Result<()> {
    let kind = config
        .instruments
        .get(&a.instrument)
        .map(|c| c.kind)
        .ok_or_else(|| usage(format!("unknown instrument {:?}", a.instrument)))?;
    let spacing = (a.interval_ms.max(0.0) * config.sample_rate as f64 / 1000.0).round() as u64;
    let lines = if let Some(axis) = a.sweep {
        if !matches!(kind, InstrumentKind::Headband | InstrumentKind::Handheld) {
            bail!(usage(format!("--sweep needs a headband or handheld, {} is {kind:?}", a.instrument)));
        }
        simulate::sweep(&a.instrument, axis, a.count, spacing)
    } else if a.walk {
        if kind != InstrumentKind::AirHarp {
            bail!(usage(format!("--walk needs an air_harp, {} is {kind:?}", a.instrument)));
        }
        simulate::walk(&a.instrument, a.count, spacing, a.seed)
    } else {
        if kind != InstrumentKind::DrumPads {
            bail!(usage(format!("--pattern needs drum_pads, {} is {kind:?}", a.instrument)));
        }
        let p = a.pattern.expect("clap requires one script");
        simulate::pattern(&a.instrument, p, a.count, config.context.tempo, config.sample_rate)
    };
    emit(&lines, a.udp.as_deref(), a.realtime.then_some(config.sample_rate))
}

fn emit(lines: &[SensorLine], udp: Option<&str>, pace: Option<u32>) -> Result<()> {
    let socket = match udp {
        Some(addr) => {
            let s = UdpSocket::bind("0.0.0.0:0")?;
            s.connect(addr).with_context(|| format!("udp target {addr}"))?;
            Some(s)
        }
        None => None,
    };
    let start = Instant::now();
    let mut out = io::stdout().lock();
    for l in lines {
        if let (Some(sr), Some(ts)) = (pace, l.ts) {
            let due = Duration::from_secs_f64(ts as f64 / sr as f64);
            if let Some(w) = due.checked_sub(start.elapsed()) {
                thread::sleep(w);
            }
        }
        let text = sensor::to_line(l);
        match &socket {
            Some(s) => {
                s.send(text.as_bytes())?;
            }
            None => writeln!(out, "{text}")?,
        }
    }
    out.flush()?;
    Ok(())
}

fn sync_master(config: &mut EngineConfig, a: MasterArgs) -> Result<()> {
    if let Some(p) = a.port {
        config.sync.port = p;
    }
    if let Some(b) = a.broadcast {
        config.sync.broadcast_addr = b;
    }
    config.context.key = a.key.unwrap_or(config.context.key);
    config.context.scale = a.scale.unwrap_or(config.context.scale);
    config.context.tempo = a.tempo.unwrap_or(config.context.tempo);
    revalidate(config)?;
    let limit = a.seconds.map(|s| seconds(s, "--seconds")).transpose()?;
    let store = config.context_store()?;
    let mut master = SyncMaster::new(ContextMessage::from_context(store.current()), config.sync.keepalive_ms);
    let target = format!("{}:{}", config.sync.broadcast_addr, config.sync.port);
    let mut sender = UdpSender::new(target.as_str()).with_context(|| format!("socket for {target}"))?;
    let (tx, rx) = mpsc::channel();
    if a.stdin {
        let parser = config.line_parser();
        let table = store.table().clone();
        thread::spawn(move || {
            for (n, line) in io::stdin().lock().lines().enumerate() {
                let Ok(line) = line else { return };
                match parser.parse(&line).map(|l| l.body) {
                    Ok(LineBody::Context {
                        key,
                        scale_id,
                        tempo_bpm,
                    }) if table.get(scale_id).is_some() => {
                        let _ = tx.send((key, scale_id, tempo_bpm));
                    }
                    Ok(_) => log::warn!("line {}: not a context line with a known scale", n + 1),
                    Err(e) => log::warn!("line {}: {e}", n + 1),
                }
            }
        });
    }
    let stop = interrupt_flag()?;
    log::info!("sync master broadcasting to {target}");
    let start = Instant::now();
    wait(limit, &stop, || {
        while let Ok((key, scale, tempo)) = rx.try_recv() {
            let mut msg = master.current();
            msg.key = PitchClass::value(key);
            msg.scale_id = scale;
            if let Some(t) = tempo {
                msg.tempo_bpm = t.round() as i32;
            }
            master.set_context(msg);
        }
        if let Err(e) = master.poll(start.elapsed().as_millis() as u64, &mut sender) {
            log::warn!("{e}");
        }
        Ok(())
    })?;
    log::info!("sent {} packets", master.packets_sent());
    Ok(())
}

fn sync_client(config: &mut EngineConfig, a: ClientArgs) -> Result<()> {
    if let Some(p) = a.port {
        config.sync.port = p;
    }
    let limit = a.seconds.map(|s| seconds(s, "--seconds")).transpose()?;
    let mut store = config.context_store()?;
    let mut client = SyncClient::new(store.table().clone());
    let mut rx = UdpReceiver::bind(("0.0.0.0", config.sync.port), Duration::from_millis(50))
        .with_context(|| format!("listening on port {}", config.sync.port))?;
    let stop = interrupt_flag()?;
    log::info!("sync client listening on {}", rx.local_addr()?);
    let start = Instant::now();
    let mut out = io::stdout().lock();
    wait(limit, &stop, || {
        while let Some(p) = rx.recv()? {
            match client.receive(p, start.elapsed().as_millis() as u64) {
                ClientAction::Apply(msg) => {
                    if let Some(change) = sync::apply_message(&msg, &mut store) {
                        let c = &change.current;
                        writeln!(
                            out,
                            "{}",
                            serde_json::json!({"key": c.key.value(), "scale": c.scale.id, "tempo": c.tempo_bpm})
                        )?;
                        out.flush()?;
                    }
                }
                ClientAction::UnknownScale(id) => log::warn!("unknown scale {id}"),
                _ => {}
            }
        }
        Ok(())
    })?;
    Ok(())
}
