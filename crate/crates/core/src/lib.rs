//! Cyberbullying detection for short social-media posts.
//!
//! Posts are cleaned and labeled ([`corpus`]), turned into vector sequences by
//! a pluggable provider ([`embeddings`]), classified by a from-scratch LSTM
//! ([`nn`]) trained and applied by [`trainer`], and scored by [`metrics`].

pub mod corpus;
pub mod embeddings;
pub mod metrics;
pub mod nn;
pub mod synthetic;
pub mod trainer;
