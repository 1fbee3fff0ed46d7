pub mod cli;
pub mod config;
pub mod consistency;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod qa;
pub mod reward;
pub mod schema;
pub mod serve;
pub mod synth;
