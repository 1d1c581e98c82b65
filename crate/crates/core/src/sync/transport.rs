//! Packet transports for the sync protocol: UDP and a seeded lossy simulation.

use std::collections::VecDeque;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait PacketSink {
    fn send(&mut self, packet: &[u8]) -> io::Result<()>;
}

/// Keeps every packet it is handed, optionally failing instead.
#[derive(Debug, Default)]
pub struct RecordingSink {
    pub packets: Vec<Vec<u8>>,
    /// Value of `now` when each packet was sent.
    pub times: Vec<u64>,
    pub now: u64,
    pub fail: bool,
}

impl PacketSink for RecordingSink {
    fn send(&mut self, packet: &[u8]) -> io::Result<()> {
        if self.fail {
            return Err(io::Error::new(io::ErrorKind::NetworkUnreachable, "sink set to fail"));
        }
        self.packets.push(packet.to_vec());
        self.times.push(self.now);
        Ok(())
    }
}

/// Non-blocking UDP sender, broadcast-enabled.
#[derive(Debug)]
pub struct UdpSender {
    socket: UdpSocket,
    target: SocketAddr,
}

impl UdpSender {
    pub fn new(target: impl ToSocketAddrs) -> io::Result<Self> {
        let target = target
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let bind: SocketAddr = if target.is_ipv4() {
            "0.0.0.0:0".parse().unwrap()
        } else {
            "[::]:0".parse().unwrap()
        };
        let socket = UdpSocket::bind(bind)?;
        socket.set_broadcast(true)?;
        socket.set_nonblocking(true)?;
        Ok(UdpSender { socket, target })
    }

    pub fn target(&self) -> SocketAddr {
        self.target
    }
}

impl PacketSink for UdpSender {
    fn send(&mut self, packet: &[u8]) -> io::Result<()> {
        match self.socket.send_to(packet, self.target) {
            Ok(_) => Ok(()),
            // stale context packets are superseded by the next one anyway
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => Ok(()),
            Err(e) => Err(e),
        }
    }
}

/// Blocking UDP receiver with a read timeout.
#[derive(Debug)]
pub struct UdpReceiver {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpReceiver {
    pub fn bind(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<Self> {
        let socket = UdpSocket::bind(addr)?;
        socket.set_read_timeout(Some(timeout))?;
        Ok(UdpReceiver {
            socket,
            buf: vec![0; 65_536],
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Next datagram, or `None` when the timeout passes first.
    pub fn recv(&mut self) -> io::Result<Option<&[u8]>> {
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, _)) => Ok(Some(&self.buf[..n])),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Broadcast medium for a simulated ensemble: every packet is delivered to
/// each client independently with probability `1 - loss`, after `latency_ms`.
#[derive(Debug)]
pub struct SimulatedNetwork {
    rng: ChaCha8Rng,
    loss: f64,
    latency_ms: u64,
    now: u64,
    inboxes: Vec<VecDeque<(u64, Vec<u8>)>>,
    sent: u64,
    dropped: u64,
}

impl SimulatedNetwork {
    pub fn new(clients: usize, loss: f64, latency_ms: u64, seed: u64) -> Self {
        SimulatedNetwork {
            rng: ChaCha8Rng::seed_from_u64(seed),
            loss: loss.clamp(0.0, 1.0),
            latency_ms,
            now: 0,
            inboxes: vec![VecDeque::new(); clients],
            sent: 0,
            dropped: 0,
        }
    }

    pub fn set_time(&mut self, now_ms: u64) {
        self.now = now_ms;
    }

    /// Packets that have arrived at `client` by `now_ms`.
    pub fn deliver(&mut self, client: usize, now_ms: u64) -> Vec<Vec<u8>> {
        let inbox = &mut self.inboxes[client];
        let mut out = Vec::new();
        while inbox.front().is_some_and(|(t, _)| *t <= now_ms) {
            out.push(inbox.pop_front().unwrap().1);
        }
        out
    }

    /// Per-client deliveries attempted and dropped so far.
    pub fn stats(&self) -> (u64, u64) {
        (self.sent, self.dropped)
    }
}

impl PacketSink for SimulatedNetwork {
    fn send(&mut self, packet: &[u8]) -> io::Result<()> {
        let at = self.now + self.latency_ms;
        for inbox in &mut self.inboxes {
            self.sent += 1;
            if self.rng.random::<f64>() < self.loss {
                self.dropped += 1;
            } else {
                inbox.push_back((at, packet.to_vec()));
            }
        }
        Ok(())
    }
}
