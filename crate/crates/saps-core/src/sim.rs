//! Discrete-event simulation of a pipelined encoder.
//!
//! The pipeline holds up to `capacity` frames in flight and spreads CPU time
//! across them: whenever the oldest frame finishes, every other in-flight
//! frame is credited `1/capacity` of its own cost. Total CPU time therefore
//! equals the sum of per-frame costs exactly, while completions lag
//! admissions the way they do in a real frame-parallel encoder.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;
use thiserror::Error;

use crate::controller::Controller;
use crate::estimator::{Budget, EstimatorError, EstimatorState};
use crate::seed::mix;
use crate::table::{PresetSpeedTable, Qp, TableError, PRESET_MAX, PRESET_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("pipeline capacity must be at least 1")]
    ZeroCapacity,
    #[error("cannot admit frame {frame}: pipeline full at capacity {capacity}")]
    PipelineFull { frame: usize, capacity: usize },
    #[error("cannot advance: pipeline is empty")]
    PipelineEmpty,
    #[error("frame cost must be strictly positive and finite, got {cost} for frame {frame}")]
    BadCost { frame: usize, cost: f64 },
    #[error("target frame rate must be strictly positive, got {0}")]
    BadTargetRate(f64),
    #[error("sequence scale must be strictly positive, got {0}")]
    BadScale(f64),
    #[error("noise spread must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("keyframe interval must be at least 1")]
    ZeroGopPeriod,
    #[error("keyframe cost multiplier must be strictly positive, got {0}")]
    BadGopMultiplier(f64),
    #[error("frame {frame} outside source of {n_total} frames")]
    FrameOutOfRange { frame: usize, n_total: usize },
    #[error("preset {0} outside the controllable range [1, 12]")]
    PresetOutOfRange(u8),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Anything that can price a frame at a preset: synthetic models and
/// recorded traces both implement this.
pub trait CostSource {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn n_total(&self) -> usize;
    /// CPU seconds to encode `frame` at `preset`.
    fn cost(&self, frame: usize, preset: u8) -> Result<f64, SimError>;
}

/// Per-frame random variation applied on top of the base cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Multiplicative log-normal factor with median 1.
    LogNormal {
        sigma: f64,
    },
}

/// Periodic keyframe cost spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GopSpike {
    /// A keyframe lands every `period` frames, starting at frame 0.
    pub period: usize,
    /// Keyframe cost relative to an ordinary frame.
    pub multiplier: f64,
}

/// Synthetic sequence: a ground-truth preset→speed curve plus per-sequence
/// scale, per-frame noise and an optional keyframe spike.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    width: usize,
    height: usize,
    n_total: usize,
    qp: Qp,
    true_curve: PresetSpeedTable,
    sequence_scale: f64,
    noise: NoiseModel,
    noise_seed: u64,
    gop: Option<GopSpike>,
}

impl SequenceModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        n_total: usize,
        qp: Qp,
        true_curve: PresetSpeedTable,
        sequence_scale: f64,
        noise: NoiseModel,
        noise_seed: u64,
        gop: Option<GopSpike>,
    ) -> Result<Self, SimError> {
        if sequence_scale <= 0.0 || !sequence_scale.is_finite() {
            return Err(SimError::BadScale(sequence_scale));
        }
        if let NoiseModel::LogNormal { sigma } = noise {
            if sigma < 0.0 || !sigma.is_finite() {
                return Err(SimError::BadSigma(sigma));
            }
        }
        if let Some(gop) = gop {
            if gop.period == 0 {
                return Err(SimError::ZeroGopPeriod);
            }
            if gop.multiplier <= 0.0 || !gop.multiplier.is_finite() {
                return Err(SimError::BadGopMultiplier(gop.multiplier));
            }
        }
        Ok(Self {
            width,
            height,
            n_total,
            qp,
            true_curve,
            sequence_scale,
            noise,
            noise_seed,
            gop,
        })
    }

    fn noise_multiplier(&self, frame: usize) -> f64 {
        match self.noise {
            NoiseModel::None => 1.0,
            NoiseModel::LogNormal { sigma } => {
                if sigma == 0.0 {
                    return 1.0;
                }
                // One RNG stream per frame, keyed by (seed, frame): the
                // multiplier depends on the frame alone, not on visit order.
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.noise_seed, frame as u64]));
                LogNormal::new(0.0, sigma)
                    .expect("sigma validated finite and non-negative")
                    .sample(&mut rng)
            }
        }
    }
}

impl CostSource for SequenceModel {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn n_total(&self) -> usize {
        self.n_total
    }

    fn cost(&self, frame: usize, preset: u8) -> Result<f64, SimError> {
        // Base cost: pixels over the true pixel rate at this preset and QP,
        // slowed or sped up by the per-sequence difficulty scale.
        let rate_kpps = self.sequence_scale * self.true_curve.rate(preset) * self.qp.speed_scale();
        let mut cost = (self.width * self.height) as f64 / (1000.0 * rate_kpps);
        cost *= self.noise_multiplier(frame);
        if let Some(gop) = self.gop {
            if frame.is_multiple_of(gop.period) {
                cost *= gop.multiplier;
            }
        }
        if cost <= 0.0 || !cost.is_finite() {
            return Err(SimError::BadCost { frame, cost });
        }
        Ok(cost)
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    frame: usize,
    preset: u8,
    cost: f64,
    /// Fraction of this frame's cost already paid.
    progress: f64,
}

/// A finished frame, with the cumulative CPU time at which it completed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub frame: usize,
    pub preset: u8,
    pub cost: f64,
    pub consumed_cpu: f64,
}

/// Frame-parallel encoding pipeline with bounded look-ahead.
#[derive(Debug, Clone)]
pub struct Pipeline {
    capacity: usize,
    in_flight: VecDeque<InFlight>,
    consumed_cpu: f64,
}

impl Pipeline {
    pub fn new(capacity: usize) -> Result<Self, SimError> {
        if capacity == 0 {
            return Err(SimError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            in_flight: VecDeque::with_capacity(capacity),
            consumed_cpu: 0.0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.in_flight.len() >= self.capacity
    }

    /// Cumulative CPU seconds consumed so far.
    pub fn consumed_cpu(&self) -> f64 {
        self.consumed_cpu
    }

    pub fn admit(&mut self, frame: usize, preset: u8, cost: f64) -> Result<(), SimError> {
        if self.is_full() {
            return Err(SimError::PipelineFull {
                frame,
                capacity: self.capacity,
            });
        }
        if cost <= 0.0 || !cost.is_finite() {
            return Err(SimError::BadCost { frame, cost });
        }
        self.in_flight.push_back(InFlight {
            frame,
            preset,
            cost,
            progress: 0.0,
        });
        Ok(())
    }

    /// Runs the pipeline until the oldest frame completes.
    ///
    /// The oldest frame is charged its full remaining cost; every younger
    /// in-flight frame advances by `1/capacity` of its own cost, modelling
    /// threads shared evenly across the whole buffer.
    pub fn advance_to_next_completion(&mut self) -> Result<Completion, SimError> {
        let oldest = self.in_flight.pop_front().ok_or(SimError::PipelineEmpty)?;
        self.consumed_cpu += (1.0 - oldest.progress) * oldest.cost;
        let share = 1.0 / self.capacity as f64;
        for f in &mut self.in_flight {
            // Younger frames cannot outrun the head-of-line frame; cap the
            // carried progress so each frame is paid for exactly once.
            let step = share.min(1.0 - f.progress);
            f.progress += step;
            self.consumed_cpu += step * f.cost;
        }
        Ok(Completion {
            frame: oldest.frame,
            preset: oldest.preset,
            cost: oldest.cost,
            consumed_cpu: self.consumed_cpu,
        })
    }
}

/// One frame's outcome in a simulated encode.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    /// Frame index in admission (and completion) order.
    pub frame: usize,
    /// Preset the frame was encoded at.
    pub preset: u8,
    /// CPU seconds this frame cost.
    pub cost: f64,
    /// Cumulative CPU seconds when it completed.
    pub completed_t_cpu: f64,
    /// Estimated encoding speed (fps) right after this completion.
    pub estimated_fps: Option<f64>,
    /// Speed (fps) still needed after this completion, when finite.
    pub budget_fps: Option<f64>,
    /// True average speed so far: completed frames over cumulative time.
    pub true_avg_fps: f64,
}

/// Outcome of a full simulated encode.
#[derive(Debug, Clone, Serialize)]
pub struct EncodeResult {
    pub width: usize,
    pub height: usize,
    pub n_total: usize,
    /// Overall speed the encode aimed for, in frames per second.
    pub target_fps: f64,
    /// Time budget implied by the target: `n_total / target_fps`.
    pub t_target: f64,
    pub records: Vec<FrameRecord>,
    /// Total CPU seconds actually spent.
    pub total_cpu: f64,
    /// Sum of the individual frame costs (equals `total_cpu` up to float
    /// rounding; kept separate so tests can assert the conservation).
    pub sum_costs: f64,
    /// Achieved overall speed: `n_total / total_cpu`.
    pub v_real_fps: f64,
}

impl EncodeResult {
    /// Presets visited, in completion order.
    pub fn presets(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.preset).collect()
    }
}

/// Simulates one encode, asking `policy` for a preset before each admission.
///
/// The policy sees the estimator state as it stands at admission time; the
/// estimator is fed every admission and completion, mirroring the feedback
/// an encoder wrapper would provide.
pub fn run_with_policy<S, F>(
    source: &S,
    mut policy: F,
    target_fps: f64,
    buffer: usize,
) -> Result<EncodeResult, SimError>
where
    S: CostSource + ?Sized,
    F: FnMut(&EstimatorState) -> u8,
{
    if target_fps <= 0.0 || !target_fps.is_finite() {
        return Err(SimError::BadTargetRate(target_fps));
    }
    let n_total = source.n_total();
    let t_target = n_total as f64 / target_fps;
    let mut est = EstimatorState::new(n_total, t_target, source.width(), source.height())?;
    let mut pipeline = Pipeline::new(buffer)?;
    let mut records = Vec::with_capacity(n_total);
    let mut sum_costs = 0.0;
    let mut next_frame = 0;

    while records.len() < n_total {
        // Keep the look-ahead full while frames remain.
        while next_frame < n_total && !pipeline.is_full() {
            let preset = policy(&est).clamp(PRESET_MIN, PRESET_MAX);
            let cost = source.cost(next_frame, preset)?;
            pipeline.admit(next_frame, preset, cost)?;
            est.record_admission(preset)?;
            sum_costs += cost;
            next_frame += 1;
        }
        let done = pipeline.advance_to_next_completion()?;
        est.record_completion(done.consumed_cpu)?;
        records.push(FrameRecord {
            frame: done.frame,
            preset: done.preset,
            cost: done.cost,
            completed_t_cpu: done.consumed_cpu,
            estimated_fps: est.current_speed(),
            budget_fps: match est.budget_speed() {
                Budget::Speed(v) => Some(v),
                Budget::Exhausted | Budget::Done => None,
            },
            true_avg_fps: (records.len() + 1) as f64 / done.consumed_cpu,
        });
    }

    let total_cpu = pipeline.consumed_cpu();
    Ok(EncodeResult {
        width: source.width(),
        height: source.height(),
        n_total,
        target_fps,
        t_target,
        records,
        total_cpu,
        sum_costs,
        v_real_fps: n_total as f64 / total_cpu,
    })
}

/// Simulates one encode under closed-loop preset control.
pub fn run_closed_loop<S>(
    source: &S,
    controller: &mut Controller,
    target_fps: f64,
    buffer: usize,
) -> Result<EncodeResult, SimError>
where
    S: CostSource + ?Sized,
{
    run_with_policy(source, |est| controller.step(est), target_fps, buffer)
}

/// Simulates one encode pinned at a fixed preset.
pub fn run_fixed_preset<S>(source: &S, preset: u8, buffer: usize) -> Result<EncodeResult, SimError>
where
    S: CostSource + ?Sized,
{
    // The target only sets the estimator's time budget, which a fixed-preset
    // run ignores; any positive value works.
    run_with_policy(source, |_| preset, 1.0, buffer)
}
