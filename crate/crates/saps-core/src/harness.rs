//! Experiment harness: sweeps classes, targets and quantizers over
//! synthetic sequences, runs the closed loop on each and aggregates the
//! achieved speed error; also drives the fixed-preset runs used to check
//! the speed estimator against ground truth.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Controller, ControllerConfig, ControllerError};
use crate::estimator::fps_to_pixel_rate;
use crate::report::{CellReport, ClassAverage, Report, RunRecord};
use crate::seed::mix;
use crate::sim::{
    run_closed_loop, run_fixed_preset, GopSpike, NoiseModel, SequenceModel, SimError,
};
use crate::table::{PresetSpeedTable, Qp, PRESET_MAX, PRESET_MIN};

/// Distinguishes the RNG streams derived from one class seed.
const SCALE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("failed to read experiment config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse experiment config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("speed error needs at least one (achieved, target) pair")]
    NoSamples,
    #[error("target speed must be strictly positive, got {0}")]
    BadTarget(f64),
}

/// One resolution class in the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Synthetic sequences drawn for this class.
    pub sequences: usize,
    /// Fixed seed for this class; derived from the experiment seed if unset.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Range the per-sequence difficulty scale is drawn from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
}

/// Periodic keyframe cost spike, as configured.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GopConfig {
    pub period: usize,
    pub multiplier: f64,
}

/// Full description of a grid experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed every random draw derives from.
    pub seed: u64,
    pub frames_per_sequence: usize,
    /// Frames the encoder pipeline holds in flight.
    pub buffer_size: usize,
    /// Target overall speeds, in frames per second.
    pub targets_fps: Vec<f64>,
    pub qps: Vec<u8>,
    pub controller: ControllerConfig,
    pub classes: Vec<ClassConfig>,
    /// Log-normal spread of per-frame cost noise (0 disables).
    pub noise_sigma: f64,
    pub scale_range: ScaleRange,
    pub gop: Option<GopConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            frames_per_sequence: 300,
            buffer_size: 16,
            targets_fps: vec![16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125],
            qps: vec![23, 27, 33, 37],
            controller: ControllerConfig::default(),
            classes: vec![
                ClassConfig {
                    name: "A2".to_string(),
                    width: 1920,
                    height: 1080,
                    sequences: 8,
                    seed: None,
                },
                ClassConfig {
                    name: "A3".to_string(),
                    width: 1280,
                    height: 720,
                    sequences: 8,
                    seed: None,
                },
                ClassConfig {
                    name: "A4".to_string(),
                    width: 640,
                    height: 360,
                    sequences: 8,
                    seed: None,
                },
            ],
            noise_sigma: 0.2,
            scale_range: ScaleRange { min: 0.5, max: 2.0 },
            gop: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.frames_per_sequence == 0 {
            return fail("frames_per_sequence must be at least 1".into());
        }
        if self.buffer_size == 0 {
            return fail("buffer_size must be at least 1".into());
        }
        if self.targets_fps.is_empty() {
            return fail("targets_fps must not be empty".into());
        }
        for &t in &self.targets_fps {
            if t <= 0.0 || !t.is_finite() {
                return fail(format!("targets_fps entries must be positive, got {t}"));
            }
        }
        if self.qps.is_empty() {
            return fail("qps must not be empty".into());
        }
        for &qp in &self.qps {
            if Qp::new(qp).is_err() {
                return fail(format!("qp {qp} outside the valid range [1, 63]"));
            }
        }
        if self.classes.is_empty() {
            return fail("classes must not be empty".into());
        }
        for class in &self.classes {
            if class.width == 0 || class.height == 0 {
                return fail(format!("class {} has empty frames", class.name));
            }
            if class.sequences == 0 {
                return fail(format!("class {} has no sequences", class.name));
            }
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.classes.len() {
            return fail("class names must be unique".into());
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return fail(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if self.scale_range.min.is_nan()
            || self.scale_range.min <= 0.0
            || self.scale_range.max < self.scale_range.min
        {
            return fail(format!(
                "scale_range must satisfy 0 < min <= max, got [{}, {}]",
                self.scale_range.min, self.scale_range.max
            ));
        }
        if !self.scale_range.max.is_finite() {
            return fail("scale_range.max must be finite".into());
        }
        if let Some(gop) = self.gop {
            if gop.period == 0 {
                return fail("gop.period must be at least 1".into());
            }
            if gop.multiplier <= 0.0 || !gop.multiplier.is_finite() {
                return fail(format!(
                    "gop.multiplier must be positive, got {}",
                    gop.multiplier
                ));
            }
        }
        self.controller.validate()?;
        Ok(())
    }

    fn class_seed(&self, class_idx: usize) -> u64 {
        self.classes[class_idx]
            .seed
            .unwrap_or_else(|| mix(&[self.seed, class_idx as u64]))
    }

    /// Difficulty scale for one sequence, drawn once per (class, sequence).
    pub fn sequence_scale(&self, class_idx: usize, sequence: usize) -> f64 {
        let seed = mix(&[self.class_seed(class_idx), sequence as u64, SCALE_STREAM]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.random_range(self.scale_range.min..=self.scale_range.max)
    }

    /// Noise stream seed for one sequence.
    pub fn sequence_noise_seed(&self, class_idx: usize, sequence: usize) -> u64 {
        mix(&[self.class_seed(class_idx), sequence as u64, NOISE_STREAM])
    }
}

/// Coordinates of one run in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub class_idx: usize,
    pub target_idx: usize,
    pub qp_idx: usize,
    pub sequence: usize,
}

/// Every run in the grid, in report order.
pub fn plan_runs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut plan = Vec::new();
    for class_idx in 0..cfg.classes.len() {
        for target_idx in 0..cfg.targets_fps.len() {
            for qp_idx in 0..cfg.qps.len() {
                for sequence in 0..cfg.classes[class_idx].sequences {
                    plan.push(RunSpec {
                        class_idx,
                        target_idx,
                        qp_idx,
                        sequence,
                    });
                }
            }
        }
    }
    plan
}

/// Whether a target speed lies within the preset range for a geometry.
///
/// Judged at the table's own quantizer anchor so the flag describes the
/// cell, not one particular run.
pub fn target_reachable(
    width: usize,
    height: usize,
    target_fps: f64,
    table: &PresetSpeedTable,
    qp: Qp,
) -> bool {
    let kpps = fps_to_pixel_rate(target_fps, width, height);
    let slowest = qp.speed_scale() * table.rate(PRESET_MIN);
    let fastest = qp.speed_scale() * table.rate(PRESET_MAX);
    kpps >= slowest && kpps <= fastest
}

/// Mean relative speed error over (achieved, target) pairs.
pub fn speed_error(samples: &[(f64, f64)]) -> Result<f64, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::NoSamples);
    }
    let mut sum = 0.0;
    for &(achieved, target) in samples {
        if target <= 0.0 || !target.is_finite() {
            return Err(HarnessError::BadTarget(target));
        }
        sum += (achieved - target).abs() / target;
    }
    Ok(sum / samples.len() as f64)
}

/// Executes one grid run: builds the synthetic sequence, runs the closed
/// loop against it and summarizes the outcome.
///
/// Depends only on the config and the run spec, never on other runs, so calls
/// can execute in any order or in parallel.
pub fn execute_run(
    cfg: &ExperimentConfig,
    base_table: &PresetSpeedTable,
    spec: RunSpec,
) -> Result<RunRecord, HarnessError> {
    let class = &cfg.classes[spec.class_idx];
    let target_fps = cfg.targets_fps[spec.target_idx];
    let qp = Qp::new(cfg.qps[spec.qp_idx]).expect("qps validated");
    let scale = cfg.sequence_scale(spec.class_idx, spec.sequence);
    let noise_seed = cfg.sequence_noise_seed(spec.class_idx, spec.sequence);

    let noise = if cfg.noise_sigma > 0.0 {
        NoiseModel::LogNormal {
            sigma: cfg.noise_sigma,
        }
    } else {
        NoiseModel::None
    };
    let model = SequenceModel::new(
        class.width,
        class.height,
        cfg.frames_per_sequence,
        qp,
        PresetSpeedTable::reference(),
        scale,
        noise,
        noise_seed,
        cfg.gop.map(|g| GopSpike {
            period: g.period,
            multiplier: g.multiplier,
        }),
    )?;

    let mut controller = Controller::initialize(
        target_fps,
        class.width,
        class.height,
        qp,
        base_table.clone(),
        cfg.controller.clone(),
    )?;
    let initial_preset = controller.preset();
    let result = run_closed_loop(&model, &mut controller, target_fps, cfg.buffer_size)?;

    let presets = result.presets();
    Ok(RunRecord {
        class: class.name.clone(),
        sequence: spec.sequence,
        qp: qp.value(),
        target_fps,
        noise_seed,
        scale,
        v_real_fps: result.v_real_fps,
        rel_error: (result.v_real_fps - target_fps).abs() / target_fps,
        initial_preset,
        final_preset: *presets.last().expect("at least one frame"),
        min_preset: *presets.iter().min().expect("at least one frame"),
        max_preset: *presets.iter().max().expect("at least one frame"),
        total_cpu_s: result.total_cpu,
    })
}

/// Groups executed runs into cells and computes the aggregate errors.
///
/// `runs` must correspond elementwise to [`plan_runs`] output.
pub fn assemble_report(
    cfg: &ExperimentConfig,
    base_table: &PresetSpeedTable,
    runs: Vec<RunRecord>,
) -> Report {
    let plan = plan_runs(cfg);
    assert_eq!(plan.len(), runs.len(), "runs must match the plan");

    let mut cells = Vec::new();
    for class_idx in 0..cfg.classes.len() {
        let class = &cfg.classes[class_idx];
        for target_idx in 0..cfg.targets_fps.len() {
            let target_fps = cfg.targets_fps[target_idx];
            let cell_runs: Vec<RunRecord> = plan
                .iter()
                .zip(&runs)
                .filter(|(spec, _)| spec.class_idx == class_idx && spec.target_idx == target_idx)
                .map(|(_, run)| run.clone())
                .collect();
            let samples: Vec<(f64, f64)> = cell_runs
                .iter()
                .map(|r| (r.v_real_fps, r.target_fps))
                .collect();
            cells.push(CellReport {
                class: class.name.clone(),
                width: class.width,
                height: class.height,
                target_fps,
                reachable: target_reachable(
                    class.width,
                    class.height,
                    target_fps,
                    base_table,
                    Qp::ANCHOR,
                ),
                run_count: cell_runs.len(),
                eps_v: speed_error(&samples).ok(),
                runs: cell_runs,
            });
        }
    }

    let class_averages = cfg
        .classes
        .iter()
        .map(|class| {
            let errors: Vec<f64> = cells
                .iter()
                .filter(|c| c.class == class.name && c.reachable)
                .filter_map(|c| c.eps_v)
                .collect();
            ClassAverage {
                class: class.name.clone(),
                eps_v: mean(&errors),
            }
        })
        .collect();

    let cell_errors: Vec<f64> = cells
        .iter()
        .filter(|c| c.reachable)
        .filter_map(|c| c.eps_v)
        .collect();
    let run_errors: Vec<f64> = cells
        .iter()
        .filter(|c| c.reachable)
        .flat_map(|c| c.runs.iter().map(|r| r.rel_error))
        .collect();

    Report {
        schema_version: Report::SCHEMA_VERSION,
        config: cfg.clone(),
        cells,
        class_averages,
        overall_per_cell: mean(&cell_errors),
        overall_per_run: mean(&run_errors),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs the whole grid sequentially and assembles the report.
pub fn run_grid(
    cfg: &ExperimentConfig,
    base_table: &PresetSpeedTable,
) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let runs = plan_runs(cfg)
        .into_iter()
        .map(|spec| execute_run(cfg, base_table, spec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_report(cfg, base_table, runs))
}

/// Setup for one estimator-validation encode: a fixed preset, no feedback.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub width: usize,
    pub height: usize,
    pub preset: u8,
    pub frames: usize,
    pub buffer_size: usize,
    pub qp: u8,
    /// Log-normal spread of per-frame cost noise (0 disables).
    pub noise_sigma: f64,
    /// Difficulty scale of the synthetic sequence.
    pub scale: f64,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            preset: 6,
            frames: 160,
            buffer_size: 16,
            qp: 27,
            noise_sigma: 0.0,
            scale: 1.0,
            seed: 7,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.width == 0 || self.height == 0 {
            return fail("frame dimensions must be positive".into());
        }
        if !(PRESET_MIN..=PRESET_MAX).contains(&self.preset) {
            return fail(format!("preset {} outside [1, 12]", self.preset));
        }
        if self.frames == 0 {
            return fail("frames must be at least 1".into());
        }
        if self.buffer_size == 0 {
            return fail("buffer_size must be at least 1".into());
        }
        if Qp::new(self.qp).is_err() {
            return fail(format!("qp {} outside the valid range [1, 63]", self.qp));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return fail("noise_sigma must be non-negative".into());
        }
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return fail("scale must be positive".into());
        }
        Ok(())
    }
}

/// Estimated versus true speed after one completion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ValidationPoint {
    /// Completions so far.
    pub completed: usize,
    /// Speed the estimator reports at this point (fps).
    pub estimated_fps: f64,
    /// True average speed so far: completions over CPU time (fps).
    pub actual_fps: f64,
    /// estimated / actual.
    pub ratio: f64,
}

/// Estimator trajectory over one fixed-preset encode.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationSeries {
    pub config: ValidationConfig,
    pub points: Vec<ValidationPoint>,
}

/// Runs a fixed-preset encode and compares the pipelined speed estimate
/// against the true average after every completion.
pub fn validate_estimator(cfg: &ValidationConfig) -> Result<ValidationSeries, HarnessError> {
    cfg.validate()?;
    let noise = if cfg.noise_sigma > 0.0 {
        NoiseModel::LogNormal {
            sigma: cfg.noise_sigma,
        }
    } else {
        NoiseModel::None
    };
    let model = SequenceModel::new(
        cfg.width,
        cfg.height,
        cfg.frames,
        Qp::new(cfg.qp).expect("qp validated"),
        PresetSpeedTable::reference(),
        cfg.scale,
        noise,
        mix(&[cfg.seed, VALIDATION_STREAM]),
        None,
    )?;
    let result = run_fixed_preset(&model, cfg.preset, cfg.buffer_size)?;
    let points = result
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let estimated = r
                .estimated_fps
                .expect("estimate exists after every completion");
            ValidationPoint {
                completed: i + 1,
                estimated_fps: estimated,
                actual_fps: r.true_avg_fps,
                ratio: estimated / r.true_avg_fps,
            }
        })
        .collect();
    Ok(ValidationSeries {
        config: cfg.clone(),
        points,
    })
}
