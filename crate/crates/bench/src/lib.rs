//! Criterion benchmarks for `cogflow`; see `benches/`.
