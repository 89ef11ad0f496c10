pub mod classify;
pub mod config;
pub mod dictionary;
pub mod eval;
pub mod kmeans;
pub mod linalg;
pub mod pipeline;
pub mod screening;
pub mod seeds;
pub mod sparse;
pub mod synth;
pub mod waveform;
