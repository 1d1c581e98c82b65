//! Scale-locked adaptive instrument ensemble engine.

pub mod config;
pub mod dsp;
pub mod engine;
pub mod event;
pub mod instruments;
pub mod io;
pub mod sequencer;
pub mod sync;
pub mod theory;
