//! Scene-grounded navigation toward remote objects.
//!
//! The crate builds the full stack from scratch: a small reverse-mode
//! autodiff engine ([`autodiff`]), neural blocks ([`nn`]), a procedural
//! viewpoint-graph simulator ([`world`]), the two grounding pre-training
//! tasks ([`grounding`]), the memory-augmented action decoder
//! ([`agent`]), its mixed imitation/reinforcement trainer ([`trainer`]) and
//! the evaluation suite ([`eval`]).
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists
//! them.

pub mod agent;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod nn;
pub mod pipeline;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
