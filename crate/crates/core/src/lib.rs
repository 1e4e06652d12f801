pub mod cli;
pub mod diagnostics;
pub mod field;
pub mod kde;
pub mod kernelopt;
pub mod omt;
pub mod swarm;
