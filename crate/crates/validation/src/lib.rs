//! Host package for the end-to-end acceptance suite in `tests/acceptance.rs`.
