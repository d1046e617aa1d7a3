//! Criterion benchmarks for the exact trainer, the reductions and the
//! building blocks; see `benches/`.
