//! Support code for the `cssl` binary.

pub mod checks;
