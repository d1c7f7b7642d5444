//! Emulation, telemetry and analysis toolkit for a fluidically innervated
//! wearable pressure pad.

// `!(x < y)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cycles;
pub mod dsp;
pub mod event;
pub mod model;
pub mod session;
pub mod sim;
pub mod fit;
pub mod special;
pub mod stats;
pub mod telemetry;
