//! Pedestrian pose trajectory learning: data model, autodiff, LSTM, training,
//! sampling rollout and evaluation metrics. `no_std` + `alloc` so the
//! prediction side can run on robot compute without an OS dependency.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod loss;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pose;
pub mod predict;
pub mod synth;
pub mod tape;
pub mod train;
pub mod trajectory;
