//! Preset switching: compares the speed still needed against the speed the
//! table predicts for nearby presets and moves at most two steps per frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{fps_to_pixel_rate, Budget, EstimatorState};
use crate::table::{PresetSpeedTable, Qp, TableError, PRESET_MAX, PRESET_MIN};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("threshold ordering violated: require down < up, got down={down}, up={up}")]
    ThresholdOrder { down: f64, up: f64 },
    #[error("double-step bound must exceed single-step bound ({0} vs {1})")]
    StepBoundOrder(f64, f64),
    #[error("update weight must lie in [0, 1], got {0}")]
    WeightOutOfRange(f64),
    #[error("update cadence must be at least 1 frame")]
    ZeroCadence,
    #[error("threshold must be strictly positive and finite, got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Tuning knobs for the switching rule and the online table update.
///
/// The defaults reproduce the stock behaviour: switch up as soon as the
/// needed speed exceeds the current preset's, switch down only below 0.9 of
/// it (the dead zone biases toward finishing early), and nudge the table by
/// 5% of each measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Switch to a faster preset when needed/current exceeds this.
    pub up_threshold: f64,
    /// Switch to a slower preset when needed/current falls below this.
    pub down_threshold: f64,
    /// Single step up unless the next preset would still be this overloaded.
    pub up_keep: f64,
    /// Step up by two when even the next preset is overloaded past this.
    pub up_double: f64,
    /// Single step down unless the next preset is this underloaded.
    pub down_keep: f64,
    /// Step down by two when even the next preset idles below this.
    pub down_double: f64,
    /// Check the single-step bound before the double-step bound; the double
    /// branch is then unreachable, so steps never exceed one preset.
    pub literal_branch_order: bool,
    /// Blend weight of each speed measurement into the table (0 disables).
    pub update_weight: f64,
    /// Completed frames between table updates.
    pub update_cadence: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            up_threshold: 1.0,
            down_threshold: 0.9,
            up_keep: 0.5,
            up_double: 2.0,
            down_keep: 1.8,
            down_double: 0.45,
            literal_branch_order: false,
            update_weight: 0.05,
            update_cadence: 1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        for &t in &[
            self.up_threshold,
            self.down_threshold,
            self.up_keep,
            self.up_double,
            self.down_keep,
            self.down_double,
        ] {
            if t <= 0.0 || !t.is_finite() {
                return Err(ControllerError::BadThreshold(t));
            }
        }
        if self.down_threshold >= self.up_threshold {
            return Err(ControllerError::ThresholdOrder {
                down: self.down_threshold,
                up: self.up_threshold,
            });
        }
        if self.up_double <= self.up_keep {
            return Err(ControllerError::StepBoundOrder(
                self.up_double,
                self.up_keep,
            ));
        }
        if self.down_keep <= self.down_double {
            return Err(ControllerError::StepBoundOrder(
                self.down_keep,
                self.down_double,
            ));
        }
        if !(0.0..=1.0).contains(&self.update_weight) {
            return Err(ControllerError::WeightOutOfRange(self.update_weight));
        }
        if self.update_cadence == 0 {
            return Err(ControllerError::ZeroCadence);
        }
        Ok(())
    }
}

/// Ratio of the speed still needed to a preset's predicted speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Acceleration {
    /// needed / predicted: above 1 the preset is too slow.
    Factor(f64),
    /// The time budget ran out with frames left; no finite factor exists.
    BudgetExhausted,
    /// Nothing left to encode.
    Done,
}

/// Preset step from the acceleration at the current preset and its
/// neighbours. Probes are `None` where no neighbour exists.
///
/// The corrected ordering checks the wider (double-step) bound first. The
/// literal ordering checks the single-step bound first, which shadows the
/// double branch entirely; it is kept selectable for comparison.
pub fn switching_delta(
    a_current: f64,
    a_up: Option<f64>,
    a_down: Option<f64>,
    cfg: &ControllerConfig,
) -> i8 {
    if a_current > cfg.up_threshold {
        match a_up {
            None => 0,
            Some(a) if cfg.literal_branch_order => {
                if a > cfg.up_keep {
                    1
                } else if a > cfg.up_double {
                    2
                } else {
                    0
                }
            }
            Some(a) => {
                if a > cfg.up_double {
                    2
                } else if a > cfg.up_keep {
                    1
                } else {
                    0
                }
            }
        }
    } else if a_current < cfg.down_threshold {
        match a_down {
            None => 0,
            Some(a) if cfg.literal_branch_order => {
                if a < cfg.down_keep {
                    -1
                } else if a < cfg.down_double {
                    -2
                } else {
                    0
                }
            }
            Some(a) => {
                if a < cfg.down_double {
                    -2
                } else if a < cfg.down_keep {
                    -1
                } else {
                    0
                }
            }
        }
    } else {
        0
    }
}

/// Closed-loop preset controller for one encode.
///
/// Call [`Controller::step`] once per admitted frame with the current
/// estimator state; it updates the internal table from the latest speed
/// measurement and returns the preset to encode the next frame at.
#[derive(Debug, Clone)]
pub struct Controller {
    preset: u8,
    table: PresetSpeedTable,
    config: ControllerConfig,
    qp: Qp,
    completions_at_last_update: usize,
}

impl Controller {
    /// Picks the starting preset for a target frame rate at the given
    /// geometry and quantizer, before any feedback exists.
    pub fn initialize(
        target_fps: f64,
        width: usize,
        height: usize,
        qp: Qp,
        table: PresetSpeedTable,
        config: ControllerConfig,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        let target_kpps = fps_to_pixel_rate(target_fps, width, height);
        let preset = table.nearest_preset(target_kpps, qp)?;
        Ok(Self {
            preset,
            table,
            config,
            qp,
            completions_at_last_update: 0,
        })
    }

    pub fn preset(&self) -> u8 {
        self.preset
    }

    pub fn table(&self) -> &PresetSpeedTable {
        &self.table
    }

    pub fn qp(&self) -> Qp {
        self.qp
    }

    /// Acceleration factor at a (possibly fractional) preset: the speed the
    /// estimator says is still needed over the speed the table predicts.
    pub fn acceleration(
        &self,
        est: &EstimatorState,
        preset: f64,
    ) -> Result<Acceleration, TableError> {
        match est.budget_speed() {
            Budget::Done => Ok(Acceleration::Done),
            Budget::Exhausted => Ok(Acceleration::BudgetExhausted),
            Budget::Speed(fps) => {
                let needed_kpps = fps_to_pixel_rate(fps, est.width(), est.height());
                let predicted_kpps = self.table.expected_speed(preset, self.qp)?;
                Ok(Acceleration::Factor(needed_kpps / predicted_kpps))
            }
        }
    }

    fn probe(&self, est: &EstimatorState, preset: i16) -> Option<f64> {
        if !(i16::from(PRESET_MIN)..=i16::from(PRESET_MAX)).contains(&preset) {
            return None;
        }
        match self.acceleration(est, f64::from(preset)) {
            Ok(Acceleration::Factor(a)) => Some(a),
            _ => None,
        }
    }

    /// Preset step the switching rule would take right now.
    pub fn decide_delta(&self, est: &EstimatorState) -> i8 {
        match self.acceleration(est, f64::from(self.preset)) {
            Ok(Acceleration::Done) => 0,
            Ok(Acceleration::BudgetExhausted) => {
                // Out of time: all that is left is to finish as fast as
                // the encoder allows.
                i8::try_from(i16::from(PRESET_MAX) - i16::from(self.preset)).unwrap()
            }
            Ok(Acceleration::Factor(a)) => {
                let up = self.probe(est, i16::from(self.preset) + 1);
                let down = self.probe(est, i16::from(self.preset) - 1);
                switching_delta(a, up, down, &self.config)
            }
            // Table errors cannot occur for in-range presets; hold steady
            // rather than panic if one ever does.
            Err(_) => 0,
        }
    }

    /// Feeds the latest measurement into the table, applies the switching
    /// rule and returns the preset for the next frame.
    pub fn step(&mut self, est: &EstimatorState) -> u8 {
        let Some(speed_fps) = est.current_speed() else {
            // No completion yet: nothing measured, nothing to react to.
            return self.preset;
        };

        if self.config.update_weight > 0.0
            && est.completed() - self.completions_at_last_update >= self.config.update_cadence
        {
            if let Some(p_avg) = est.average_preset() {
                // The table is anchored at the reference quantizer, so
                // normalize the measurement before blending it in.
                let v_kpps =
                    fps_to_pixel_rate(speed_fps, est.width(), est.height()) / self.qp.speed_scale();
                self.table = self
                    .table
                    .updated(v_kpps, p_avg, self.config.update_weight)
                    .expect("update inputs validated by construction");
                self.completions_at_last_update = est.completed();
            }
        }

        let delta = self.decide_delta(est);
        let next = (i16::from(self.preset) + i16::from(delta))
            .clamp(i16::from(PRESET_MIN), i16::from(PRESET_MAX));
        self.preset = next as u8;
        self.preset
    }
}
