use std::net::TcpStream;
use std::time::{Duration, Instant};

use ensemble_core::config::{EngineConfig, TransportConfig};
use ensemble_core::engine::{Input, LiveEngine};
use ensemble_core::instruments::pads::BUTTON_RECORD;
use ensemble_core::instruments::{SensorFrame, SensorPayload};
use ensemble_core::io::audio::NullSink;
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start() -> LiveEngine {
    let config = EngineConfig {
        sample_rate: 8000,
        block_size: 80,
        transports: TransportConfig {
            ws: Some("127.0.0.1:0".into()),
            ..Default::default()
        },
        ..EngineConfig::default()
    };
    LiveEngine::start(&config, Box::new(NullSink)).unwrap()
}

fn connect(engine: &LiveEngine) -> Client {
    let addr = engine.ws_addr().unwrap();
    let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
    }
    ws
}

/// Read until a message satisfies `pred` or two seconds pass.
fn wait_for(ws: &mut Client, pred: impl Fn(&Value) -> bool) -> Option<Value> {
    let deadline = Instant::now() + Duration::from_secs(2);
    while Instant::now() < deadline {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let v: Value = serde_json::from_str(&t).unwrap();
                if pred(&v) {
                    return Some(v);
                }
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => panic!("{e}"),
        }
    }
    None
}

fn send(ws: &mut Client, v: Value) {
    ws.send(Message::text(v.to_string())).unwrap();
}

#[test]
fn snapshot_on_connect() {
    let engine = start();
    let mut ws = connect(&engine);
    let ctx = wait_for(&mut ws, |v| v["type"] == "context").expect("context snapshot");
    assert_eq!(ctx["key"], 0);
    assert_eq!(ctx["scale_name"], "major");
    assert!(wait_for(&mut ws, |v| v["type"] == "transport").is_some());
    engine.shutdown().unwrap();
}

#[test]
fn set_context_is_broadcast() {
    let engine = start();
    let mut a = connect(&engine);
    let mut b = connect(&engine);
    wait_for(&mut b, |v| v["type"] == "context").unwrap();
    send(&mut a, json!({"type": "set_context", "key": 2, "scale": 4, "tempo": 100.0}));
    for ws in [&mut a, &mut b] {
        let ctx = wait_for(ws, |v| v["type"] == "context" && v["key"] == 2).expect("new context");
        assert_eq!(ctx["scale_name"], "dorian");
        assert_eq!(ctx["tempo_bpm"], 100.0);
    }
    // late joiners are rehydrated with the new state
    let mut c = connect(&engine);
    let ctx = wait_for(&mut c, |v| v["type"] == "context").unwrap();
    assert_eq!(ctx["key"], 2);
    engine.shutdown().unwrap();
}

#[test]
fn malformed_message_keeps_connection() {
    let engine = start();
    let mut ws = connect(&engine);
    ws.send(Message::text("{not json")).unwrap();
    assert!(wait_for(&mut ws, |v| v["type"] == "error").is_some());
    send(&mut ws, json!({"type": "pad", "i": 0, "p": 0.5, "bogus": 1}));
    assert!(wait_for(&mut ws, |v| v["type"] == "error").is_some());
    send(&mut ws, json!({"type": "set_context", "key": 12, "scale": 0}));
    assert!(wait_for(&mut ws, |v| v["type"] == "error").is_some());
    send(&mut ws, json!({"type": "preset", "id": 3}));
    let p = wait_for(&mut ws, |v| v["type"] == "preset" && v["id"] == 3).expect("connection still live");
    assert!(p["name"].is_string());
    engine.shutdown().unwrap();
}

#[test]
fn steps_and_meters_are_pushed() {
    let engine = start();
    let mut ws = connect(&engine);
    send(&mut ws, json!({"type": "transport", "playing": true}));
    let first = wait_for(&mut ws, |v| v["type"] == "step").expect("step");
    let next = wait_for(&mut ws, |v| v["type"] == "step" && v["value"] != first["value"]);
    assert!(next.is_some());

    let start = Instant::now();
    let mut meters = 0;
    while start.elapsed() < Duration::from_secs(1) {
        if wait_for(&mut ws, |v| v["type"] == "meter").is_some() {
            meters += 1;
        }
    }
    assert!(meters > 0 && meters <= 32, "{meters} meters in one second");
    engine.shutdown().unwrap();
}

#[test]
fn pad_hit_in_record_mode_updates_pattern() {
    let engine = start();
    let mut ws = connect(&engine);
    engine
        .inputs()
        .send(Input::Frame(SensorFrame::new(
            "pads",
            SensorPayload::Button { id: BUTTON_RECORD, pressed: true },
        )))
        .unwrap();
    send(&mut ws, json!({"type": "pad", "i": 1, "p": 0.8}));
    let pattern = wait_for(&mut ws, |v| v["type"] == "pattern" && v.to_string().contains("\"on\":true"));
    assert!(pattern.is_some(), "no pattern with the recorded hit");
    engine.shutdown().unwrap();
}
