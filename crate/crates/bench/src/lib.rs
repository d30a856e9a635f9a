//! Benchmarks for the fitting and backtesting kernels; see `benches/`.
