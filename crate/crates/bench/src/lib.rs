//! Criterion benchmarks for the convolution engine, the backbone and the
//! per-frame tracking step. Run with `cargo bench -p tatrack-bench`.
