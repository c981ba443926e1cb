//! Multi-model repeated sampling with consistency-gated switching, plus
//! exact probabilistic oracles for the voting procedures it relies on.

pub mod answers;
pub mod backends;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod fixture;
mod hashing;
pub mod report;
pub mod theory;
pub mod voting;

pub use hashing::sha256_hex;
