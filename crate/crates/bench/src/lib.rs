//! Benchmarks for the FFT, model forward passes and training steps; see
//! `benches/`.
