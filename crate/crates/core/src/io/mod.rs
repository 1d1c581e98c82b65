//! Boundary codecs and transports: MIDI, sensor lines, WAV, audio output
//! and the control-surface WebSocket bridge.

pub mod audio;
pub mod midi;
pub mod sensor;
pub mod wav;
pub mod ws;
