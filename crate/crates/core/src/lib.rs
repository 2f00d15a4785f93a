//! Melody-aware music similarity toolkit.

pub mod augment;
pub mod corpus;
pub mod detect;
pub mod dtw;
pub mod embedder;
pub mod features;
pub mod melody;
pub mod midi;
pub mod pipeline;
pub mod render;
