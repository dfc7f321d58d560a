//! Benchmarks for the solver; see `benches/`.
