pub mod annotate;
pub mod calibration;
pub mod formats;
pub mod geometry;
pub mod hybrid;
pub mod mocap;
pub mod pipeline;
pub mod qc;
pub mod service;
pub mod sync;
pub mod synth;
