//! WebSocket control bridge for browser UIs.
//!
//! Inbound: `{"type":"pad","i":1,"p":0.5}`, `key`, `strip`, `set_context`,
//! `preset`, `toggle_fx`, `transport`, `sync_override`.
//! Outbound: the JSON form of [`Notification`].

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TryRecvError, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Deserialize;
use tungstenite::{Message, WebSocket};

use crate::config::EngineConfig;
use crate::engine::{Input, Notification};
use crate::event::InstrumentId;
use crate::instruments::{Command, InstrumentKind, SensorFrame, SensorPayload};
use crate::theory::PitchClass;

/// Meter pushes per second, at most.
pub const METER_MAX_HZ: u64 = 30;
const CLIENT_QUEUE: usize = 256;
const POLL: Duration = Duration::from_millis(10);

/// Rate limit for meter pushes.
#[derive(Debug, Clone)]
pub struct MeterThrottle {
    interval_ms: u64,
    last: Option<u64>,
}

impl MeterThrottle {
    pub fn new(max_hz: u64) -> Self {
        MeterThrottle {
            interval_ms: 1000_u64.div_ceil(max_hz.max(1)),
            last: None,
        }
    }

    pub fn allow(&mut self, now_ms: u64) -> bool {
        match self.last {
            Some(t) if now_ms < t + self.interval_ms => false,
            _ => {
                self.last = Some(now_ms);
                true
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Inbound {
    Pad {
        i: u32,
        p: f32,
        #[serde(default)]
        inst: Option<String>,
    },
    Key {
        i: u32,
        on: bool,
        #[serde(default)]
        inst: Option<String>,
    },
    Strip {
        x: f32,
        #[serde(default)]
        inst: Option<String>,
    },
    SetContext {
        key: i64,
        scale: u32,
        #[serde(default)]
        tempo: Option<f64>,
    },
    Preset {
        id: u32,
        #[serde(default)]
        inst: Option<String>,
    },
    ToggleFx,
    Transport {
        #[serde(default)]
        playing: Option<bool>,
    },
    SyncOverride {
        on: bool,
    },
}

/// Which instruments UI gestures address when a message names none.
#[derive(Debug, Clone, Default)]
pub struct BridgeTargets {
    kinds: BTreeMap<String, InstrumentKind>,
    touch: Option<String>,
    pads: Option<String>,
}

impl BridgeTargets {
    pub fn from_config(config: &EngineConfig) -> Self {
        let kinds: BTreeMap<_, _> = config.instruments.iter().map(|(id, c)| (id.clone(), c.kind)).collect();
        let first = |k| kinds.iter().find(|(_, &v)| v == k).map(|(id, _)| id.clone());
        BridgeTargets {
            touch: first(InstrumentKind::TouchSynth),
            pads: first(InstrumentKind::DrumPads),
            kinds,
        }
    }

    fn resolve(&self, inst: Option<String>, kind: InstrumentKind) -> Result<InstrumentId, String> {
        let fallback = match kind {
            InstrumentKind::TouchSynth => &self.touch,
            _ => &self.pads,
        };
        let id = inst
            .or_else(|| fallback.clone())
            .ok_or_else(|| format!("no {kind:?} instrument configured"))?;
        match self.kinds.get(&id) {
            Some(&k) if k == kind => Ok(InstrumentId::new(&id)),
            Some(k) => Err(format!("instrument {id:?} is a {k:?}")),
            None => Err(format!("unknown instrument {id:?}")),
        }
    }
}

/// Translate one inbound text message.
pub fn parse_inbound(text: &str, targets: &BridgeTargets) -> Result<Input, String> {
    let msg: Inbound = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let frame = |id, payload| Input::Frame(SensorFrame::new(id, payload));
    Ok(match msg {
        Inbound::Pad { i, p, inst } => frame(
            targets.resolve(inst, InstrumentKind::DrumPads)?,
            SensorPayload::PadPressure { pad: i, pressure: p },
        ),
        Inbound::Key { i, on, inst } => frame(
            targets.resolve(inst, InstrumentKind::TouchSynth)?,
            SensorPayload::TouchKey { index: i, on },
        ),
        Inbound::Strip { x, inst } => frame(
            targets.resolve(inst, InstrumentKind::DrumPads)?,
            SensorPayload::Strip { position: x },
        ),
        Inbound::SetContext { key, scale, tempo } => Input::SetContext {
            key: PitchClass::new(key).map_err(|e| e.to_string())?,
            scale_id: scale,
            tempo_bpm: tempo,
        },
        Inbound::Preset { id, inst } => Input::SetPreset {
            instrument: inst.map(|s| InstrumentId::new(&s)),
            preset: id,
        },
        Inbound::ToggleFx => Input::Command(targets.resolve(None, InstrumentKind::DrumPads)?, Command::ToggleDryWet),
        Inbound::Transport { playing } => Input::SetTransport(playing),
        Inbound::SyncOverride { on } => Input::SetSyncOverride(on),
    })
}

pub fn error_reply(message: &str) -> String {
    Notification::Error {
        message: message.to_string(),
    }
    .to_json()
}

/// Latest-state cache key, `None` for transient notifications.
fn state_key(n: &Notification) -> Option<String> {
    Some(match n {
        Notification::Context { .. } => "context".into(),
        Notification::Preset { instrument, .. } => format!("preset:{instrument}"),
        Notification::Step { .. } => "step".into(),
        Notification::Pattern(_) => "pattern".into(),
        Notification::Transport { .. } => "transport".into(),
        Notification::DryWet { .. } => "dry_wet".into(),
        Notification::Sync { .. } => "sync".into(),
        Notification::Meter { .. } | Notification::Error { .. } => return None,
    })
}

struct HubInner {
    clients: Vec<SyncSender<String>>,
    latest: BTreeMap<String, String>,
    meter: MeterThrottle,
}

/// Fans notifications out to every connected UI and remembers the latest
/// state so new connections start in sync.
pub struct WsHub {
    inner: Mutex<HubInner>,
}

impl Default for WsHub {
    fn default() -> Self {
        WsHub {
            inner: Mutex::new(HubInner {
                clients: Vec::new(),
                latest: BTreeMap::new(),
                meter: MeterThrottle::new(METER_MAX_HZ),
            }),
        }
    }
}

impl WsHub {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Returns false when a meter push was throttled.
    pub fn publish(&self, n: &Notification, now_ms: u64) -> bool {
        let mut inner = self.inner.lock().expect("hub lock");
        if matches!(n, Notification::Meter { .. }) && !inner.meter.allow(now_ms) {
            return false;
        }
        let json = n.to_json();
        if let Some(k) = state_key(n) {
            inner.latest.insert(k, json.clone());
        }
        inner.clients.retain(|c| match c.try_send(json.clone()) {
            Ok(()) | Err(TrySendError::Full(_)) => true,
            Err(TrySendError::Disconnected(_)) => false,
        });
        true
    }

    pub fn client_count(&self) -> usize {
        self.inner.lock().expect("hub lock").clients.len()
    }

    fn subscribe(&self) -> (Receiver<String>, Vec<String>) {
        let (tx, rx) = mpsc::sync_channel(CLIENT_QUEUE);
        let mut inner = self.inner.lock().expect("hub lock");
        inner.clients.push(tx);
        (rx, inner.latest.values().cloned().collect())
    }
}

pub struct WsServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl WsServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        hub: Arc<WsHub>,
        inputs: Sender<Input>,
        targets: BridgeTargets,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let targets = Arc::new(targets);
        let handle = thread::Builder::new().name("ws-accept".into()).spawn(move || {
            let mut conns = Vec::new();
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let (hub, inputs, targets, flag) = (hub.clone(), inputs.clone(), targets.clone(), flag.clone());
                        let spawned = thread::Builder::new()
                            .name(format!("ws-{peer}"))
                            .spawn(move || {
                                if let Err(e) = serve(stream, &hub, &inputs, &targets, &flag) {
                                    log::debug!("ws {peer}: {e}");
                                }
                            });
                        match spawned {
                            Ok(h) => conns.push(h),
                            Err(e) => log::warn!("ws: cannot spawn connection thread: {e}"),
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                    Err(e) => log::warn!("ws accept: {e}"),
                }
                conns.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            for h in conns {
                let _ = h.join();
            }
        })?;
        Ok(WsServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WsServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve(
    stream: TcpStream,
    hub: &WsHub,
    inputs: &Sender<Input>,
    targets: &BridgeTargets,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let (outbound, snapshot) = hub.subscribe();
    for s in snapshot {
        ws.send(Message::text(s))?;
    }
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match parse_inbound(&text, targets) {
                    Ok(input) => inputs.send(input).err().map(|_| "engine is shutting down".to_string()),
                    Err(e) => Some(e),
                };
                if let Some(e) = reply {
                    ws.send(Message::text(error_reply(&e)))?;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        loop {
            match outbound.try_recv() {
                Ok(s) => ws.write(Message::text(s))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.flush() {
            Err(e) if !is_timeout(&e) => return Err(e),
            _ => {}
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets() -> BridgeTargets {
        BridgeTargets::from_config(&EngineConfig::default())
    }

    #[test]
    fn inbound_messages() {
        let t = targets();
        assert_eq!(
            parse_inbound(r#"{"type":"set_context","key":2,"scale":0}"#, &t).unwrap(),
            Input::SetContext {
                key: PitchClass::new(2).unwrap(),
                scale_id: 0,
                tempo_bpm: None
            }
        );
        assert_eq!(
            parse_inbound(r#"{"type":"pad","i":1,"p":0.5}"#, &t).unwrap(),
            Input::Frame(SensorFrame::new("pads", SensorPayload::PadPressure { pad: 1, pressure: 0.5 }))
        );
        assert_eq!(
            parse_inbound(r#"{"type":"key","i":3,"on":true}"#, &t).unwrap(),
            Input::Frame(SensorFrame::new("touch1", SensorPayload::TouchKey { index: 3, on: true }))
        );
        assert_eq!(
            parse_inbound(r#"{"type":"toggle_fx"}"#, &t).unwrap(),
            Input::Command("pads".into(), Command::ToggleDryWet)
        );
        assert_eq!(
            parse_inbound(r#"{"type":"transport","playing":false}"#, &t).unwrap(),
            Input::SetTransport(Some(false))
        );
    }

    #[test]
    fn inbound_rejections() {
        let t = targets();
        for bad in [
            "nope",
            r#"{"type":"pad","i":1}"#,
            r#"{"type":"dance"}"#,
            r#"{"type":"set_context","key":12,"scale":0}"#,
            r#"{"type":"key","i":1,"on":true,"inst":"pads"}"#,
            r#"{"type":"pad","i":1,"p":0.5,"inst":"ghost"}"#,
        ] {
            assert!(parse_inbound(bad, &t).is_err(), "{bad}");
        }
    }

    #[test]
    fn meter_throttle_caps_rate() {
        let mut m = MeterThrottle::new(30);
        let allowed = (0..1000).filter(|&ms| m.allow(ms)).count();
        assert!(allowed <= 30, "{allowed}");
        assert!(allowed >= 29);
    }

    #[test]
    fn hub_caches_state_not_meters() {
        let hub = WsHub::new();
        hub.publish(&Notification::Step { value: 1 }, 0);
        hub.publish(&Notification::Step { value: 2 }, 0);
        assert!(hub.publish(&Notification::Meter { left: 0.1, right: 0.1 }, 0));
        assert!(!hub.publish(&Notification::Meter { left: 0.1, right: 0.1 }, 10));
        let (_, snapshot) = hub.subscribe();
        assert_eq!(snapshot, vec![r#"{"type":"step","value":2}"#.to_string()]);
    }
}
