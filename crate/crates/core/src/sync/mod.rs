//! Ensemble context sync: a master broadcasts key, scale and tempo as OSC
//! and clients adopt it unless overridden.

pub mod osc;
pub mod transport;

use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::theory::{ContextChanged, ContextStore, MusicalContext, PitchClass, ScaleTable, TEMPO_MAX, TEMPO_MIN};
pub use osc::{OscArg, OscError, OscMessage};
pub use transport::{PacketSink, RecordingSink, SimulatedNetwork, UdpReceiver, UdpSender};

pub const CONTEXT_ADDRESS: &str = "/ensemble/context";
pub const DEFAULT_PORT: u16 = 9000;
pub const DEFAULT_KEEPALIVE_MS: u64 = 1000;
/// Extra copies sent after every change.
pub const BURST_REPEATS: u32 = 5;
pub const BURST_SPACING_MS: u64 = 100;
const BACKOFF_MIN_MS: u64 = 100;
const BACKOFF_MAX_MS: u64 = 5000;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("send failed (attempt {attempt}, retry in {retry_ms} ms): {source}")]
    Send {
        attempt: u32,
        retry_ms: u64,
        source: io::Error,
    },
    #[error(transparent)]
    Osc(#[from] OscError),
    #[error("socket: {0}")]
    Socket(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncRole {
    Master,
    Client,
    #[default]
    Off,
}

/// Wire form of the shared context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextMessage {
    pub key: u8,
    pub scale_id: u32,
    pub tempo_bpm: i32,
}

impl ContextMessage {
    pub fn from_context(ctx: &MusicalContext) -> Self {
        ContextMessage {
            key: ctx.key.value(),
            scale_id: ctx.scale.id,
            tempo_bpm: ctx.tempo_bpm.round() as i32,
        }
    }

    pub fn to_osc(&self) -> OscMessage {
        OscMessage::new(
            CONTEXT_ADDRESS,
            vec![
                OscArg::Int(self.key as i32),
                OscArg::Int(self.scale_id as i32),
                OscArg::Int(self.tempo_bpm),
            ],
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        osc::encode(&self.to_osc()).expect("context message is always encodable")
    }

    /// `None` when the message has another address or layout.
    pub fn from_osc(msg: &OscMessage) -> Option<Self> {
        if msg.address != CONTEXT_ADDRESS {
            return None;
        }
        match msg.args.as_slice() {
            [OscArg::Int(key), OscArg::Int(scale), OscArg::Int(tempo)] => Some(ContextMessage {
                key: u8::try_from(*key).ok().filter(|k| *k < 12)?,
                scale_id: u32::try_from(*scale).ok()?,
                tempo_bpm: *tempo,
            }),
            _ => None,
        }
    }

    pub fn matches(&self, ctx: &MusicalContext) -> bool {
        *self == ContextMessage::from_context(ctx)
    }
}

/// Broadcasts the context immediately on change, repeats it a few times
/// shortly after, and then every keep-alive period.
#[derive(Debug)]
pub struct SyncMaster {
    current: ContextMessage,
    keepalive_ms: u64,
    immediate: bool,
    burst_left: u32,
    next_burst: u64,
    next_keepalive: u64,
    failures: u32,
    retry_at: u64,
    sent: u64,
}

impl SyncMaster {
    pub fn new(initial: ContextMessage, keepalive_ms: u64) -> Self {
        SyncMaster {
            current: initial,
            keepalive_ms: keepalive_ms.max(1),
            immediate: true,
            burst_left: 0,
            next_burst: 0,
            next_keepalive: 0,
            failures: 0,
            retry_at: 0,
            sent: 0,
        }
    }

    pub fn current(&self) -> ContextMessage {
        self.current
    }

    pub fn packets_sent(&self) -> u64 {
        self.sent
    }

    pub fn set_context(&mut self, msg: ContextMessage) {
        if msg != self.current {
            self.current = msg;
            self.immediate = true;
        }
    }

    /// Earliest time at which [`poll`](Self::poll) has something to do.
    pub fn next_due(&self) -> u64 {
        let due = if self.immediate {
            0
        } else if self.burst_left > 0 {
            self.next_burst.min(self.next_keepalive)
        } else {
            self.next_keepalive
        };
        due.max(self.retry_at)
    }

    /// Send whatever is due at `now_ms`. At most one packet goes out per call.
    pub fn poll(&mut self, now_ms: u64, sink: &mut dyn PacketSink) -> Result<bool, SyncError> {
        if now_ms < self.next_due() {
            return Ok(false);
        }
        let burst = !self.immediate && self.burst_left > 0 && now_ms >= self.next_burst;
        let keepalive = now_ms >= self.next_keepalive;
        if let Err(source) = sink.send(&self.current.encode()) {
            self.failures += 1;
            let retry_ms = (BACKOFF_MIN_MS << (self.failures - 1).min(6)).min(BACKOFF_MAX_MS);
            self.retry_at = now_ms + retry_ms;
            return Err(SyncError::Send {
                attempt: self.failures,
                retry_ms,
                source,
            });
        }
        self.failures = 0;
        self.sent += 1;
        if self.immediate {
            self.immediate = false;
            self.burst_left = BURST_REPEATS;
            self.next_burst = now_ms + BURST_SPACING_MS;
            self.next_keepalive = now_ms + self.keepalive_ms;
        } else {
            if burst {
                self.burst_left -= 1;
                self.next_burst = now_ms + BURST_SPACING_MS;
            }
            if keepalive {
                self.next_keepalive = now_ms + self.keepalive_ms;
            }
        }
        Ok(true)
    }
}

/// What a client did with one received packet.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientAction {
    /// Valid context to adopt.
    Apply(ContextMessage),
    /// Valid, but reception is overridden.
    Overridden(ContextMessage),
    /// Another address or argument layout.
    Ignored,
    UnknownScale(u32),
    Malformed(OscError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientCounters {
    pub received: u64,
    pub applied: u64,
    pub overridden: u64,
    pub ignored: u64,
}

#[derive(Debug)]
pub struct SyncClient {
    table: Arc<ScaleTable>,
    override_on: bool,
    last_seen: Option<u64>,
    counters: ClientCounters,
}

impl SyncClient {
    pub fn new(table: Arc<ScaleTable>) -> Self {
        SyncClient {
            table,
            override_on: false,
            last_seen: None,
            counters: ClientCounters::default(),
        }
    }

    pub fn set_override(&mut self, on: bool) {
        self.override_on = on;
    }

    pub fn is_overridden(&self) -> bool {
        self.override_on
    }

    /// Time of the last valid context packet.
    pub fn last_seen(&self) -> Option<u64> {
        self.last_seen
    }

    pub fn counters(&self) -> ClientCounters {
        self.counters
    }

    /// Classify one datagram.
    pub fn receive(&mut self, packet: &[u8], now_ms: u64) -> ClientAction {
        self.counters.received += 1;
        let msg = match osc::decode(packet) {
            Ok(m) => m,
            Err(e) => {
                self.counters.ignored += 1;
                log::warn!("dropping malformed sync packet: {e}");
                return ClientAction::Malformed(e);
            }
        };
        let Some(ctx) = ContextMessage::from_osc(&msg) else {
            self.counters.ignored += 1;
            return ClientAction::Ignored;
        };
        if self.table.get(ctx.scale_id).is_none() {
            self.counters.ignored += 1;
            log::warn!("ignoring sync packet with unknown scale id {}", ctx.scale_id);
            return ClientAction::UnknownScale(ctx.scale_id);
        }
        if !(TEMPO_MIN..=TEMPO_MAX).contains(&(ctx.tempo_bpm as f64)) {
            self.counters.ignored += 1;
            log::warn!("ignoring sync packet with tempo {}", ctx.tempo_bpm);
            return ClientAction::Ignored;
        }
        self.last_seen = Some(now_ms);
        if self.override_on {
            self.counters.overridden += 1;
            return ClientAction::Overridden(ctx);
        }
        self.counters.applied += 1;
        ClientAction::Apply(ctx)
    }

    /// Receive a packet and adopt it into `store`. Returns the change when the
    /// local context actually moved.
    pub fn apply(&mut self, packet: &[u8], now_ms: u64, store: &mut ContextStore) -> Option<ContextChanged> {
        match self.receive(packet, now_ms) {
            ClientAction::Apply(msg) => apply_message(&msg, store),
            _ => None,
        }
    }
}

/// Set `store` to `msg` unless it already matches.
pub fn apply_message(msg: &ContextMessage, store: &mut ContextStore) -> Option<ContextChanged> {
    if msg.matches(store.current()) {
        return None;
    }
    let key = PitchClass::new(msg.key as i64).ok()?;
    store.set_context(key, msg.scale_id, msg.tempo_bpm as f64).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(key: u8, scale_id: u32, tempo: i32) -> ContextMessage {
        ContextMessage {
            key,
            scale_id,
            tempo_bpm: tempo,
        }
    }

    fn store() -> ContextStore {
        ContextStore::new(Arc::new(ScaleTable::shipped()), PitchClass::C, 0, 120.0).unwrap()
    }

    #[test]
    fn d_major_args() {
        let s = store();
        let mut s2 = s.clone();
        s2.set_key(PitchClass::new(2).unwrap()).unwrap();
        let m = ContextMessage::from_context(s2.current());
        assert_eq!(m.to_osc().args, vec![OscArg::Int(2), OscArg::Int(0), OscArg::Int(120)]);
        assert_eq!(m.encode().len(), 40);
    }

    #[test]
    fn master_sends_immediately_then_keeps_alive() {
        let mut sink = RecordingSink::default();
        let mut m = SyncMaster::new(msg(0, 0, 120), 1000);
        // control ticks every 10 ms
        for t in (0..=5000).step_by(10) {
            sink.now = t;
            m.poll(t, &mut sink).unwrap();
        }
        let times = sink.times.clone();
        assert_eq!(times[0], 0);
        let keepalives = times.iter().filter(|&&t| t > 500).count();
        assert!(keepalives >= 4, "{times:?}");
        assert_eq!(keepalives, 5);

        m.set_context(msg(2, 0, 120));
        sink.now = 5003;
        m.poll(5003, &mut sink).unwrap();
        assert_eq!(*sink.times.last().unwrap(), 5003);
        assert_eq!(ContextMessage::from_osc(&osc::decode(sink.packets.last().unwrap()).unwrap()), Some(msg(2, 0, 120)));
    }

    #[test]
    fn burst_after_change() {
        let mut sink = RecordingSink::default();
        let mut m = SyncMaster::new(msg(0, 0, 120), 1000);
        for t in (0..1000).step_by(10) {
            sink.now = t;
            m.poll(t, &mut sink).unwrap();
        }
        assert_eq!(sink.times, vec![0, 100, 200, 300, 400, 500]);
    }

    #[test]
    fn failing_socket_backs_off() {
        let mut sink = RecordingSink {
            fail: true,
            ..Default::default()
        };
        let mut m = SyncMaster::new(msg(0, 0, 120), 1000);
        let mut attempts = Vec::new();
        for t in (0..2000).step_by(10) {
            if m.poll(t, &mut sink).is_err() {
                attempts.push(t);
            }
        }
        assert_eq!(attempts, vec![0, 100, 300, 700, 1500]);
        sink.fail = false;
        assert!(m.poll(3100, &mut sink).unwrap());
        assert_eq!(m.packets_sent(), 1);
    }

    #[test]
    fn client_applies_and_overrides() {
        let table = Arc::new(ScaleTable::shipped());
        let mut s = store();
        let mut c = SyncClient::new(table);
        let packet = msg(2, 0, 120).encode();
        let change = c.apply(&packet, 10, &mut s).unwrap();
        assert_eq!(change.current.key.value(), 2);
        assert_eq!(c.last_seen(), Some(10));
        // same packet again: nothing changes
        assert!(c.apply(&packet, 20, &mut s).is_none());

        c.set_override(true);
        let rev = s.revision();
        assert!(c.apply(&msg(5, 1, 90).encode(), 30, &mut s).is_none());
        assert_eq!(s.revision(), rev);
        assert_eq!(c.counters().overridden, 1);

        c.set_override(false);
        assert!(c.apply(&msg(5, 1, 90).encode(), 40, &mut s).is_some());
        assert_eq!(ContextMessage::from_context(s.current()), msg(5, 1, 90));
    }

    #[test]
    fn client_ignores_bad_packets() {
        let mut s = store();
        let mut c = SyncClient::new(Arc::new(ScaleTable::shipped()));
        assert_eq!(c.receive(&msg(2, 99, 120).encode(), 0), ClientAction::UnknownScale(99));
        assert!(c.apply(&msg(2, 99, 120).encode(), 0, &mut s).is_none());
        let other = osc::encode(&OscMessage::new("/other", vec![OscArg::Int(1)])).unwrap();
        assert_eq!(c.receive(&other, 0), ClientAction::Ignored);
        assert!(matches!(c.receive(b"junk", 0), ClientAction::Malformed(_)));
        assert_eq!(c.receive(&msg(2, 0, 1000).encode(), 0), ClientAction::Ignored);
        assert_eq!(c.last_seen(), None);
        assert_eq!(s.revision(), 0);
    }
}
