pub mod codec;
pub mod control;
pub mod data;
pub mod diffusion;
pub mod experiment;
pub mod metrics;
pub mod nn;
