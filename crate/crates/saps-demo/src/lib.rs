//! Browser playground for the preset controller: three WebAssembly entry
//! points wrap natively testable functions that run the simulator and return
//! plottable series.

use saps_core::controller::{Controller, ControllerConfig};
use saps_core::harness::{
    target_reachable, validate_estimator, ValidationConfig, ValidationSeries,
};
use saps_core::sim::{run_closed_loop, NoiseModel, SequenceModel};
use saps_core::table::{PresetSpeedTable, Qp, PRESET_MAX, PRESET_MIN};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// One completed frame in a closed-loop run, ready for plotting.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ControlPoint {
    pub frame: usize,
    pub preset: u8,
    pub estimated_fps: Option<f64>,
    pub budget_fps: Option<f64>,
    pub true_avg_fps: f64,
}

/// Full closed-loop run summary plus the per-frame series.
#[derive(Debug, Clone, Serialize)]
pub struct ControlSeries {
    pub width: usize,
    pub height: usize,
    pub target_fps: f64,
    pub t_target: f64,
    pub total_cpu: f64,
    pub achieved_fps: f64,
    pub miss_rel: f64,
    pub initial_preset: u8,
    pub points: Vec<ControlPoint>,
}

/// Runs one closed-loop encode of a synthetic sequence and returns the series.
#[allow(clippy::too_many_arguments)]
pub fn control_series(
    width: usize,
    height: usize,
    target_fps: f64,
    qp: u8,
    frames: usize,
    noise_sigma: f64,
    scale: f64,
    seed: u64,
) -> Result<ControlSeries, String> {
    let qp = Qp::new(qp).map_err(|e| e.to_string())?;
    let table = PresetSpeedTable::reference();
    let noise = if noise_sigma > 0.0 {
        NoiseModel::LogNormal { sigma: noise_sigma }
    } else {
        NoiseModel::None
    };
    let model = SequenceModel::new(
        width,
        height,
        frames,
        qp,
        table.clone(),
        scale,
        noise,
        seed,
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut controller = Controller::initialize(
        target_fps,
        width,
        height,
        qp,
        table,
        ControllerConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let initial_preset = controller.preset();
    let result =
        run_closed_loop(&model, &mut controller, target_fps, 16).map_err(|e| e.to_string())?;
    let points = result
        .records
        .iter()
        .map(|r| ControlPoint {
            frame: r.frame,
            preset: r.preset,
            estimated_fps: r.estimated_fps,
            budget_fps: r.budget_fps,
            true_avg_fps: r.true_avg_fps,
        })
        .collect();
    Ok(ControlSeries {
        width,
        height,
        target_fps,
        t_target: result.t_target,
        total_cpu: result.total_cpu,
        achieved_fps: result.v_real_fps,
        miss_rel: (result.v_real_fps - target_fps) / target_fps,
        initial_preset,
        points,
    })
}

/// Runs a fixed-preset encode and returns the estimator-vs-truth series.
pub fn validation_series(
    frames: usize,
    preset: u8,
    qp: u8,
    noise_sigma: f64,
    seed: u64,
) -> Result<ValidationSeries, String> {
    let cfg = ValidationConfig {
        preset,
        frames,
        qp,
        noise_sigma,
        seed,
        ..ValidationConfig::default()
    };
    validate_estimator(&cfg).map_err(|e| e.to_string())
}

/// One preset row of the speed table evaluated at a geometry and quality.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TableRow {
    pub preset: u8,
    pub kpps: f64,
    pub fps: f64,
}

/// The speed table seen through a target: per-preset speeds plus the pick.
#[derive(Debug, Clone, Serialize)]
pub struct TableView {
    pub rows: Vec<TableRow>,
    pub initial_preset: u8,
    pub reachable: bool,
    pub target_kpps: f64,
}

/// Evaluates the reference table at a geometry, quality, and target rate.
pub fn table_view(
    width: usize,
    height: usize,
    target_fps: f64,
    qp: u8,
) -> Result<TableView, String> {
    let qp = Qp::new(qp).map_err(|e| e.to_string())?;
    let table = PresetSpeedTable::reference();
    let pixels_per_frame = (width * height) as f64 / 1000.0;
    if pixels_per_frame <= 0.0 {
        return Err("geometry must be nonempty".into());
    }
    let rows = (PRESET_MIN..=PRESET_MAX)
        .map(|preset| {
            let kpps = qp.speed_scale() * table.rate(preset);
            TableRow {
                preset,
                kpps,
                fps: kpps / pixels_per_frame,
            }
        })
        .collect();
    let initial_preset = table
        .nearest_preset(target_fps * pixels_per_frame, qp)
        .map_err(|e| e.to_string())?;
    Ok(TableView {
        rows,
        initial_preset,
        reachable: target_reachable(width, height, target_fps, &table, qp),
        target_kpps: target_fps * pixels_per_frame,
    })
}

/// Converts a demo result into a JS value, folding errors into exceptions.
fn to_js<T: Serialize>(result: Result<T, String>) -> Result<JsValue, JsValue> {
    let value = result.map_err(|e| JsValue::from_str(&e))?;
    serde_wasm_bindgen::to_value(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Browser entry point: closed-loop run, returns a `ControlSeries` object.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_control(
    width: usize,
    height: usize,
    target_fps: f64,
    qp: u8,
    frames: usize,
    noise_sigma: f64,
    scale: f64,
    seed: u64,
) -> Result<JsValue, JsValue> {
    to_js(control_series(
        width,
        height,
        target_fps,
        qp,
        frames,
        noise_sigma,
        scale,
        seed,
    ))
}

/// Browser entry point: estimator check, returns a `ValidationSeries` object.
#[wasm_bindgen]
pub fn estimator_validation(
    frames: usize,
    preset: u8,
    qp: u8,
    noise_sigma: f64,
    seed: u64,
) -> Result<JsValue, JsValue> {
    to_js(validation_series(frames, preset, qp, noise_sigma, seed))
}

/// Browser entry point: speed-table inspection, returns a `TableView` object.
#[wasm_bindgen]
pub fn speed_table(
    width: usize,
    height: usize,
    target_fps: f64,
    qp: u8,
) -> Result<JsValue, JsValue> {
    to_js(table_view(width, height, target_fps, qp))
}
