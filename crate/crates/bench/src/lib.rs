//! Criterion benchmarks for `facegeom-core`; see `benches/`.
