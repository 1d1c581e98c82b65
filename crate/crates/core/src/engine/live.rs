//! Real-time engine: transport reader threads feed one control thread,
//! which drives the render thread through a lock-free command queue.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, Read};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rtrb::{Consumer, Producer, RingBuffer};

use super::{Controller, EngineError, Input, Notification, Renderer, Report, TimedCmd};
use crate::config::EngineConfig;
use crate::io::audio::{AudioSink, Paced};
use crate::io::midi::MidiParser;
use crate::io::sensor::{LineBody, LineParser};
use crate::io::ws::{BridgeTargets, WsHub, WsServer};
use crate::sync::{ContextMessage, PacketSink, SyncMaster, SyncRole, UdpReceiver, UdpSender};

const CMD_QUEUE: usize = 4096;
const REPORT_QUEUE: usize = 1024;
const CONTROL_TICK: Duration = Duration::from_millis(2);
const READ_TIMEOUT: Duration = Duration::from_millis(50);

impl AudioSink for Box<dyn AudioSink> {
    fn write(&mut self, interleaved: &[f32]) -> io::Result<()> {
        (**self).write(interleaved)
    }

    fn finish(self: Box<Self>) -> io::Result<()> {
        (*self).finish()
    }
}

/// UDP sender that (re)creates its socket on demand so a failed socket is
/// retried on the master's backoff schedule.
struct LazyUdp {
    target: String,
    socket: Option<UdpSender>,
}

impl PacketSink for LazyUdp {
    fn send(&mut self, packet: &[u8]) -> io::Result<()> {
        if self.socket.is_none() {
            self.socket = Some(UdpSender::new(self.target.as_str())?);
        }
        let r = self.socket.as_mut().expect("socket just created").send(packet);
        if r.is_err() {
            self.socket = None;
        }
        r
    }
}

/// Convert a sensor line into engine input.
pub fn line_input(body: LineBody) -> Input {
    match body {
        LineBody::Frame(f) => Input::Frame(f),
        LineBody::Context {
            key,
            scale_id,
            tempo_bpm,
        } => Input::SetContext {
            key,
            scale_id,
            tempo_bpm,
        },
    }
}

pub struct LiveEngine {
    inputs: Sender<Input>,
    stop: Arc<AtomicBool>,
    frames: Arc<AtomicU64>,
    hub: Arc<WsHub>,
    ws: Option<WsServer>,
    joined: Vec<JoinHandle<()>>,
    render: Option<JoinHandle<io::Result<()>>>,
}

impl LiveEngine {
    /// Start every configured transport, the sync role and audio output.
    pub fn start(config: &EngineConfig, sink: Box<dyn AudioSink>) -> Result<Self, EngineError> {
        let controller = Controller::new(config)?;
        let renderer = Renderer::new(config, &controller);
        let (cmd_tx, cmd_rx) = RingBuffer::<TimedCmd>::new(CMD_QUEUE);
        let (report_tx, report_rx) = RingBuffer::<Report>::new(REPORT_QUEUE);
        let (inputs, input_rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let frames = Arc::new(AtomicU64::new(0));
        let hub = WsHub::new();
        let mut joined = Vec::new();

        let master = match config.sync.role {
            SyncRole::Master => Some((
                SyncMaster::new(ContextMessage::from_context(controller.context()), config.sync.keepalive_ms),
                LazyUdp {
                    target: format!("{}:{}", config.sync.broadcast_addr, config.sync.port),
                    socket: None,
                },
            )),
            _ => None,
        };
        if config.sync.role == SyncRole::Client {
            let rx = UdpReceiver::bind(("0.0.0.0", config.sync.port), READ_TIMEOUT)
                .map_err(|e| bind_error("sync client", &config.sync.port.to_string(), e))?;
            joined.push(spawn("sync-rx", sync_reader(rx, inputs.clone(), stop.clone()))?);
        }
        if let Some(addr) = &config.transports.udp {
            let socket = UdpSocket::bind(addr).map_err(|e| bind_error("udp sensor input", addr, e))?;
            socket.set_read_timeout(Some(READ_TIMEOUT))?;
            let parser = config.line_parser();
            joined.push(spawn(
                "udp-lines",
                udp_reader(socket, parser, inputs.clone(), stop.clone()),
            )?);
        }
        let ws = match &config.transports.ws {
            Some(addr) => Some(
                WsServer::bind(addr.as_str(), hub.clone(), inputs.clone(), BridgeTargets::from_config(config))
                    .map_err(|e| bind_error("websocket", addr, e))?,
            ),
            None => None,
        };
        if config.transports.stdin {
            // blocking read; never joined
            let (parser, tx) = (config.line_parser(), inputs.clone());
            spawn("stdin-lines", move || read_lines(io::stdin().lock(), &parser, &tx))?;
        }
        if let Some(m) = &config.transports.midi {
            let file = File::open(&m.path).map_err(|e| bind_error("midi input", &m.path.display().to_string(), e))?;
            let tx = inputs.clone();
            spawn("midi-in", move || read_midi(file, &tx))?;
        }

        let snapshot = controller.snapshot();
        for n in &snapshot {
            hub.publish(n, 0);
        }
        let control = ControlLoop {
            controller,
            inputs: input_rx,
            cmds: cmd_tx,
            backlog: VecDeque::new(),
            reports: report_rx,
            hub: hub.clone(),
            master,
            frames: frames.clone(),
            stop: stop.clone(),
            started: Instant::now(),
        };
        joined.push(spawn("control", move || control.run())?);

        let sink = Paced::new(sink, config.sample_rate);
        let block = config.block_size;
        let (f, s) = (frames.clone(), stop.clone());
        let render = thread::Builder::new()
            .name("render".into())
            .spawn(move || render_loop(renderer, cmd_rx, report_tx, Box::new(sink), block, f, s))?;

        Ok(LiveEngine {
            inputs,
            stop,
            frames,
            hub,
            ws,
            joined,
            render: Some(render),
        })
    }

    pub fn inputs(&self) -> Sender<Input> {
        self.inputs.clone()
    }

    /// Frames rendered so far.
    pub fn frames(&self) -> u64 {
        self.frames.load(Ordering::Acquire)
    }

    pub fn hub(&self) -> &Arc<WsHub> {
        &self.hub
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws.as_ref().map(|w| w.local_addr())
    }

    /// Stop all threads and finish the audio sink.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::Release);
        if let Some(ws) = self.ws.take() {
            ws.shutdown();
        }
        for h in self.joined.drain(..) {
            let _ = h.join();
        }
        match self.render.take().map(|h| h.join()) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(io::Error::other("render thread panicked")),
            None => Ok(()),
        }
    }
}

impl Drop for LiveEngine {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
    }
}

fn bind_error(what: &str, addr: &str, e: io::Error) -> EngineError {
    EngineError::Io(io::Error::new(e.kind(), format!("{what} on {addr}: {e}")))
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> io::Result<JoinHandle<()>> {
    thread::Builder::new().name(name.into()).spawn(f)
}

fn render_loop(
    mut renderer: Renderer,
    mut cmds: Consumer<TimedCmd>,
    mut reports: Producer<Report>,
    mut sink: Box<dyn AudioSink>,
    block: usize,
    frames: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    let mut pending = VecDeque::with_capacity(CMD_QUEUE);
    let mut buf = vec![0.0f32; block * 2];
    while !stop.load(Ordering::Acquire) {
        let mut sorted = true;
        while let Ok(c) = cmds.pop() {
            sorted &= pending.back().is_none_or(|b: &TimedCmd| b.at <= c.at);
            pending.push_back(c);
        }
        if !sorted {
            pending.make_contiguous().sort_by_key(|c| c.at);
        }
        renderer.render(&mut pending, &mut buf);
        for r in renderer.reports() {
            // UI state is best effort; a full queue drops the report
            let _ = reports.push(r);
        }
        frames.store(renderer.frame(), Ordering::Release);
        sink.write(&buf)?;
    }
    sink.finish()
}

struct ControlLoop {
    controller: Controller,
    inputs: Receiver<Input>,
    cmds: Producer<TimedCmd>,
    backlog: VecDeque<TimedCmd>,
    reports: Consumer<Report>,
    hub: Arc<WsHub>,
    master: Option<(SyncMaster, LazyUdp)>,
    frames: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    started: Instant,
}

impl ControlLoop {
    fn run(mut self) {
        while !self.stop.load(Ordering::Acquire) {
            match self.inputs.recv_timeout(CONTROL_TICK) {
                Ok(input) => {
                    self.handle(input);
                    while let Ok(input) = self.inputs.try_recv() {
                        self.handle(input);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            let now = self.frames.load(Ordering::Acquire);
            self.controller.tick(now);
            self.flush();
        }
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn handle(&mut self, input: Input) {
        let now = self.frames.load(Ordering::Acquire);
        if let Err(e) = self.controller.handle(input, now) {
            log::warn!("{e}");
        }
    }

    fn flush(&mut self) {
        self.backlog.extend(self.controller.drain_commands());
        while let Some(c) = self.backlog.pop_front() {
            if let Err(rtrb::PushError::Full(c)) = self.cmds.push(c) {
                self.backlog.push_front(c);
                break;
            }
        }
        let now_ms = self.now_ms();
        for n in self.controller.take_notifications() {
            if let (Notification::Context { .. }, Some((master, _))) = (&n, self.master.as_mut()) {
                master.set_context(ContextMessage::from_context(self.controller.context()));
            }
            self.hub.publish(&n, now_ms);
        }
        while let Ok(r) = self.reports.pop() {
            self.hub.publish(&Notification::from_report(&r), now_ms);
        }
        if let Some((master, sink)) = self.master.as_mut() {
            if let Err(e) = master.poll(now_ms, sink) {
                log::warn!("sync: {e}");
            }
        }
    }
}

fn sync_reader(mut rx: UdpReceiver, inputs: Sender<Input>, stop: Arc<AtomicBool>) -> impl FnOnce() {
    move || {
        while !stop.load(Ordering::Acquire) {
            match rx.recv() {
                Ok(Some(p)) => {
                    if inputs.send(Input::SyncPacket(p.to_vec())).is_err() {
                        return;
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("sync receive: {e}");
                    thread::sleep(READ_TIMEOUT);
                }
            }
        }
    }
}

fn udp_reader(socket: UdpSocket, parser: LineParser, inputs: Sender<Input>, stop: Arc<AtomicBool>) -> impl FnOnce() {
    move || {
        let mut buf = vec![0u8; 65_536];
        while !stop.load(Ordering::Acquire) {
            match socket.recv_from(&mut buf) {
                Ok((n, peer)) => {
                    let text = String::from_utf8_lossy(&buf[..n]);
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        match parser.parse(line) {
                            Ok(l) => {
                                if inputs.send(line_input(l.body)).is_err() {
                                    return;
                                }
                            }
                            Err(e) => log::warn!("udp {peer}: {e}"),
                        }
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => {
                    log::warn!("udp receive: {e}");
                    thread::sleep(READ_TIMEOUT);
                }
            }
        }
    }
}

/// Feed sensor lines from a reader until it ends; bad lines are logged.
pub fn read_lines<R: BufRead>(reader: R, parser: &LineParser, inputs: &Sender<Input>) {
    for (n, line) in reader.lines().enumerate() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        match parser.parse(&line) {
            Ok(l) => {
                if inputs.send(line_input(l.body)).is_err() {
                    return;
                }
            }
            Err(e) => log::warn!("line {}: {e}", n + 1),
        }
    }
}

fn read_midi(mut file: File, inputs: &Sender<Input>) {
    let mut parser = MidiParser::new();
    let mut buf = [0u8; 256];
    let mut msgs = Vec::new();
    loop {
        match file.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => {
                parser.feed(&buf[..n], &mut msgs);
                for m in msgs.drain(..) {
                    if inputs.send(Input::Midi(m)).is_err() {
                        return;
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                log::warn!("midi read: {e}");
                return;
            }
        }
    }
}
