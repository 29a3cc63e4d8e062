//! Benchmark support crate; see benches/kernels.rs.
