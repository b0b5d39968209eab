//! Shared fixtures live in moclip-core; this crate only hosts benchmarks.
