//! Prosodic label estimation from layered speech and text representations.

pub mod corpus;
pub mod dsp;
pub mod features;
pub mod tensor;
pub mod net;
pub mod metrics;
pub mod cli;
