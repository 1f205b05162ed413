//! Command implementations behind the `qst` binary.
//!
//! Each subcommand module exposes a clap `Args` struct and a `run` function
//! returning [`util::CliResult`]; the binary maps errors onto the stable
//! exit-code contract (0 success, 2 usage, 3 data, 4 divergence, 5
//! checkpoint mismatch). Everything here is deterministic given the flags:
//! training runs single-threaded, and benchmark loops reduce their
//! parallel results in record order.

pub mod bench;
pub mod engine;
pub mod gen;
pub mod pgm;
pub mod reconstruct;
pub mod report;
pub mod show;
pub mod train;
pub mod util;
