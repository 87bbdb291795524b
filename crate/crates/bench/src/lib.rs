//! Benchmarks live under `benches/`; see `cargo bench -p thermens-bench`.
