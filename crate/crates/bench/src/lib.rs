//! Criterion benchmarks for `lora-phy`; see `benches/`.
