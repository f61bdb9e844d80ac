pub mod domain;
pub mod eval;
pub mod expr;
pub mod sampler;
pub mod composer;
pub mod harness;
pub mod detector;
pub mod report;
pub mod config;
pub mod commands;
