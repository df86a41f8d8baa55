//! Report records shared by the `c3` binary and its tests.

pub mod records;
