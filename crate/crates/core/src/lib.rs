//! Text-cued target speaker extraction.
//!
//! Two systems share one toolkit: a text-conditioned masking network that
//! extracts the prompted speaker directly, and a two-stage pipeline that
//! blindly separates a mixture and then picks the stream matching the
//! prompt. Around them sit a synthetic paired corpus, metrics, a trainer and
//! a small reverse-mode autodiff engine.

pub mod audio;
pub mod config;
pub mod corpus;
pub mod diff;
pub mod embed;
pub mod eval;
pub mod models;
pub mod nets;
pub mod objectives;
pub mod pipeline;
pub mod seed;
pub mod train;
