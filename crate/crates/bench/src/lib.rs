//! Criterion benchmarks for the hot paths of the point process engine live
//! in `benches/hot_paths.rs`; this crate intentionally exports nothing.
