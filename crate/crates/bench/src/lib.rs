//! Benchmarks for nodenet; see `benches/training.rs`.
