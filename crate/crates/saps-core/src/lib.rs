//! Speed-adaptive preset switching for video encoders.
//!
//! Preset-based encoders trade quality for speed across a wide range, but a
//! fixed preset rarely lands on a desired total encode time. This crate
//! estimates encoding speed while a pipelined encoder keeps many frames in
//! flight, maintains a preset→speed lookup table that adapts online to the
//! content being encoded, and switches presets frame by frame so the encode
//! finishes on budget.
//!
//! The crate also ships a discrete-event encoder-pipeline simulator, a trace
//! replay layer for measured per-preset frame costs, and an experiment
//! harness that sweeps resolutions, targets and quantizers and reports the
//! achieved speed error.

pub mod controller;
pub mod estimator;
pub mod harness;
pub mod report;
pub mod seed;
pub mod sim;
pub mod table;
pub mod trace;

pub use controller::{Acceleration, Controller, ControllerConfig};
pub use estimator::{fps_to_pixel_rate, pixel_rate_to_fps, Budget, EstimatorState};
pub use harness::{ExperimentConfig, ValidationConfig};
pub use report::Report;
pub use sim::{CostSource, Pipeline, SequenceModel};
pub use table::{PresetSpeedTable, Qp, PRESET_MAX, PRESET_MIN};
pub use trace::FrameTrace;
