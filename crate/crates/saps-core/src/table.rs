//! Preset-to-speed model: the reference lookup table, QP scaling,
//! fractional-preset interpolation and the multiplicative online update.
//!
//! Speeds are kept as *pixel rates* in kilopixels per second (kpps) so that
//! sequences of different resolutions share one table.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

/// Slowest controllable preset.
pub const PRESET_MIN: u8 = 1;
/// Fastest controllable preset.
pub const PRESET_MAX: u8 = 12;
/// Number of presets covered by the table.
pub const PRESET_COUNT: usize = 12;

/// Reference pixel rates (kpps) for presets 1..=12, anchored at QP 17.
pub const REFERENCE_RATES_KPPS: [f64; PRESET_COUNT] = [
    62.6, 119.8, 284.3, 564.3, 1048.0, 2610.0, 4450.0, 7907.0, 11328.0, 13664.0, 17838.0, 24463.0,
];

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("pixel rate for preset {preset} must be strictly positive, got {rate}")]
    NonPositiveRate { preset: u8, rate: f64 },
    #[error("pixel rates must strictly increase with the preset index (violated at preset {0})")]
    NotIncreasing(u8),
    #[error("preset {0} outside the controllable range [1, 12]")]
    PresetOutOfRange(f64),
    #[error("target speed must be strictly positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("update weight must lie in [0, 1], got {0}")]
    WeightOutOfRange(f64),
    #[error("measured speed must be strictly positive, got {0}")]
    NonPositiveSpeed(f64),
}

/// Errors raised while reading a table override file.
#[derive(Debug, Error)]
pub enum TableFileError {
    #[error("failed to read table file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse table file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("table file is missing preset key \"{0}\"")]
    MissingPreset(u8),
    #[error("table file contains unexpected key \"{0}\" (expected \"1\" through \"12\")")]
    UnexpectedKey(String),
    #[error(transparent)]
    Invalid(#[from] TableError),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("QP {0} outside the valid range [1, 63]")]
pub struct QpError(pub u8);

/// A validated quantization parameter together with its speed scaling.
///
/// Coarser quantization leaves less residual work, so speed scales up with
/// QP; the factor is 1 at the QP-17 anchor of the reference table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Qp(u8);

impl Qp {
    /// QP at which the reference table was anchored (scale factor 1).
    pub const ANCHOR: Qp = Qp(17);

    pub fn new(qp: u8) -> Result<Self, QpError> {
        if (1..=63).contains(&qp) {
            Ok(Self(qp))
        } else {
            Err(QpError(qp))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Speed scale factor relative to the QP-17 anchor:
    /// `1 / (1 - 0.015 * (QP - 17))`.
    ///
    /// The denominator is strictly positive over the whole valid range, so
    /// this never divides by zero.
    pub fn speed_scale(self) -> f64 {
        1.0 / (1.0 - 0.015 * (f64::from(self.0) - 17.0))
    }
}

/// Pixel-rate lookup table over the preset range, strictly increasing.
///
/// The table is a plain value: the online update returns a new table instead
/// of mutating in place, so snapshots can be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetSpeedTable {
    rates: [f64; PRESET_COUNT],
}

impl Default for PresetSpeedTable {
    fn default() -> Self {
        Self::reference()
    }
}

impl PresetSpeedTable {
    /// Builds a table from per-preset pixel rates, validating positivity and
    /// strict monotonicity.
    pub fn new(rates: [f64; PRESET_COUNT]) -> Result<Self, TableError> {
        for (i, &rate) in rates.iter().enumerate() {
            let preset = (i + 1) as u8;
            if rate <= 0.0 || !rate.is_finite() {
                return Err(TableError::NonPositiveRate { preset, rate });
            }
            if i > 0 && rates[i - 1] >= rate {
                return Err(TableError::NotIncreasing(preset));
            }
        }
        Ok(Self { rates })
    }

    /// The built-in reference table.
    pub fn reference() -> Self {
        Self {
            rates: REFERENCE_RATES_KPPS,
        }
    }

    /// Pixel rate (kpps) at an integer preset. Panics outside [1, 12].
    pub fn rate(&self, preset: u8) -> f64 {
        assert!(
            (PRESET_MIN..=PRESET_MAX).contains(&preset),
            "preset {preset} outside [1, 12]"
        );
        self.rates[usize::from(preset) - 1]
    }

    pub fn rates(&self) -> &[f64; PRESET_COUNT] {
        &self.rates
    }

    /// Ratio of the fastest to the slowest preset speed.
    pub fn span_ratio(&self) -> f64 {
        self.rates[PRESET_COUNT - 1] / self.rates[0]
    }

    /// Pixel rate at a real-valued preset in [1, 12]: exact at integers,
    /// linearly interpolated in between. Out-of-range presets are rejected,
    /// never clamped.
    pub fn lookup(&self, p: f64) -> Result<f64, TableError> {
        if p.is_nan() || p < f64::from(PRESET_MIN) || p > f64::from(PRESET_MAX) {
            return Err(TableError::PresetOutOfRange(p));
        }
        let lo = (p.floor() as usize).clamp(1, PRESET_COUNT - 1);
        let frac = p - lo as f64;
        Ok(self.rates[lo - 1] * (1.0 - frac) + self.rates[lo] * frac)
    }

    /// Predicted pixel rate at preset `p` under quantization `qp`.
    pub fn expected_speed(&self, p: f64, qp: Qp) -> Result<f64, TableError> {
        Ok(qp.speed_scale() * self.lookup(p)?)
    }

    /// Online table update: every entry is rescaled by
    /// `(1 - w) + w * v_enc / lookup(p_avg)`, pulling the whole table toward
    /// the measured speed while preserving the entry ratios.
    ///
    /// `v_enc_kpps` must be the measured pixel rate normalized to the QP-17
    /// anchor (divide by the QP scale first).
    pub fn updated(&self, v_enc_kpps: f64, p_avg: f64, weight: f64) -> Result<Self, TableError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(TableError::WeightOutOfRange(weight));
        }
        if v_enc_kpps <= 0.0 || !v_enc_kpps.is_finite() {
            return Err(TableError::NonPositiveSpeed(v_enc_kpps));
        }
        let reference = self.lookup(p_avg)?;
        let factor = (1.0 - weight) + weight * v_enc_kpps / reference;
        let mut rates = self.rates;
        for rate in &mut rates {
            *rate *= factor;
        }
        Self::new(rates)
    }

    /// Integer preset whose predicted speed is closest to the target in the
    /// log domain. Targets outside the covered range saturate to 1 or 12.
    pub fn nearest_preset(&self, v_target_kpps: f64, qp: Qp) -> Result<u8, TableError> {
        if v_target_kpps <= 0.0 || !v_target_kpps.is_finite() {
            return Err(TableError::NonPositiveTarget(v_target_kpps));
        }
        let target_ln = v_target_kpps.ln();
        let mut best = PRESET_MIN;
        let mut best_dist = f64::INFINITY;
        for preset in PRESET_MIN..=PRESET_MAX {
            let dist = (target_ln - (qp.speed_scale() * self.rate(preset)).ln()).abs();
            if dist < best_dist {
                best = preset;
                best_dist = dist;
            }
        }
        Ok(best)
    }

    /// Parses a table override: TOML with the twelve keys "1" through "12"
    /// mapping preset to kpps.
    pub fn from_toml_str(text: &str) -> Result<Self, TableFileError> {
        let raw: BTreeMap<String, f64> = toml::from_str(text)?;
        for key in raw.keys() {
            let ok = key
                .parse::<u8>()
                .is_ok_and(|p| (PRESET_MIN..=PRESET_MAX).contains(&p));
            if !ok {
                return Err(TableFileError::UnexpectedKey(key.clone()));
            }
        }
        let mut rates = [0.0; PRESET_COUNT];
        for preset in PRESET_MIN..=PRESET_MAX {
            let value = raw
                .get(&preset.to_string())
                .ok_or(TableFileError::MissingPreset(preset))?;
            rates[usize::from(preset) - 1] = *value;
        }
        Ok(Self::new(rates)?)
    }

    pub fn load(path: &Path) -> Result<Self, TableFileError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_constants() {
        let table = PresetSpeedTable::reference();
        assert_eq!(table.rate(1), 62.6);
        assert_eq!(table.rate(6), 2610.0);
        assert_eq!(table.rate(12), 24463.0);
    }

    #[test]
    fn lookup_exact_at_integers() {
        let table = PresetSpeedTable::reference();
        for preset in PRESET_MIN..=PRESET_MAX {
            assert_eq!(table.lookup(f64::from(preset)).unwrap(), table.rate(preset));
        }
    }

    #[test]
    fn lookup_interpolates() {
        let table = PresetSpeedTable::reference();
        assert_eq!(table.lookup(2.0).unwrap(), 119.8);
        assert_eq!(table.lookup(1.0).unwrap(), 62.6);
        assert_relative_eq!(table.lookup(1.5).unwrap(), 91.2, max_relative = 1e-12);
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let table = PresetSpeedTable::reference();
        assert_eq!(table.lookup(0.99), Err(TableError::PresetOutOfRange(0.99)));
        assert_eq!(
            table.lookup(12.01),
            Err(TableError::PresetOutOfRange(12.01))
        );
        assert!(table.lookup(f64::NAN).is_err());
    }

    #[test]
    fn qp_scale_values() {
        assert_eq!(Qp::new(17).unwrap().speed_scale(), 1.0);
        assert_relative_eq!(
            Qp::new(27).unwrap().speed_scale(),
            1.0 / 0.85,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            Qp::new(37).unwrap().speed_scale(),
            1.0 / 0.7,
            max_relative = 1e-12
        );
        assert!(Qp::new(0).is_err());
        assert!(Qp::new(64).is_err());
    }

    #[test]
    fn qp_scale_increasing() {
        let mut last = 0.0;
        for qp in 1..=63 {
            let scale = Qp::new(qp).unwrap().speed_scale();
            assert!(scale > last, "scale not increasing at QP {qp}");
            last = scale;
        }
    }

    #[test]
    fn expected_speed_applies_scale() {
        let table = PresetSpeedTable::reference();
        assert_eq!(
            table.expected_speed(1.0, Qp::new(17).unwrap()).unwrap(),
            62.6
        );
        assert_relative_eq!(
            table.expected_speed(1.0, Qp::new(37).unwrap()).unwrap(),
            62.6 / 0.7,
            max_relative = 1e-12
        );
        assert_eq!(
            table.expected_speed(12.0, Qp::new(17).unwrap()).unwrap(),
            24463.0
        );
    }

    #[test]
    fn update_identities() {
        let table = PresetSpeedTable::reference();
        // Zero weight leaves the table untouched.
        let same = table.updated(1234.5, 4.0, 0.0).unwrap();
        assert_eq!(same.rates(), table.rates());
        // Measured speed equal to the prediction leaves the table untouched.
        let v = table.lookup(3.0).unwrap();
        let same = table.updated(v, 3.0, 0.7).unwrap();
        for (a, b) in same.rates().iter().zip(table.rates()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
        // Full-weight update with a doubled measurement doubles every entry.
        let doubled = table.updated(2.0 * v, 3.0, 1.0).unwrap();
        for (a, b) in doubled.rates().iter().zip(table.rates()) {
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-15);
        }
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let table = PresetSpeedTable::reference();
        assert!(matches!(
            table.updated(100.0, 4.0, 1.5),
            Err(TableError::WeightOutOfRange(_))
        ));
        assert!(matches!(
            table.updated(0.0, 4.0, 0.5),
            Err(TableError::NonPositiveSpeed(_))
        ));
        assert!(matches!(
            table.updated(100.0, 13.0, 0.5),
            Err(TableError::PresetOutOfRange(_))
        ));
    }

    #[test]
    fn nearest_preset_examples() {
        let table = PresetSpeedTable::reference();
        let anchor = Qp::new(17).unwrap();
        assert_eq!(table.nearest_preset(62.6, anchor).unwrap(), 1);
        assert_eq!(table.nearest_preset(10.0, anchor).unwrap(), 1);
        assert_eq!(table.nearest_preset(1e9, anchor).unwrap(), 12);
        assert!(table.nearest_preset(0.0, anchor).is_err());
        assert!(table.nearest_preset(-5.0, anchor).is_err());
    }

    /// Brute-force log-distance oracle for `nearest_preset`.
    fn nearest_by_log_scan(table: &PresetSpeedTable, target: f64, qp: Qp) -> u8 {
        (PRESET_MIN..=PRESET_MAX)
            .min_by(|&a, &b| {
                let da = (target.ln() - (qp.speed_scale() * table.rate(a)).ln()).abs();
                let db = (target.ln() - (qp.speed_scale() * table.rate(b)).ln()).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    }

    #[test]
    fn nearest_preset_matches_log_oracle() {
        let table = PresetSpeedTable::reference();
        let anchor = Qp::new(17).unwrap();
        // 3400 kpps sits between presets 6 (2610) and 7 (4450); the geometric
        // mean of the pair is ~3408, so 3400 is log-closer to preset 6.
        assert_eq!(nearest_by_log_scan(&table, 3400.0, anchor), 6);
        assert_eq!(table.nearest_preset(3400.0, anchor).unwrap(), 6);
        for &target in &[30.0, 100.0, 259.2, 900.0, 3500.0, 9000.0, 20000.0, 1e6] {
            assert_eq!(
                table.nearest_preset(target, anchor).unwrap(),
                nearest_by_log_scan(&table, target, anchor),
                "target {target}"
            );
        }
    }

    #[test]
    fn table_file_round_trip() {
        let text = REFERENCE_RATES_KPPS
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{} = {v:?}\n", i + 1))
            .collect::<String>();
        let table = PresetSpeedTable::from_toml_str(&text).unwrap();
        assert_eq!(table.rates(), &REFERENCE_RATES_KPPS);

        assert!(matches!(
            PresetSpeedTable::from_toml_str("1 = 62.6\n"),
            Err(TableFileError::MissingPreset(2))
        ));
        let extra = format!("{text}13 = 30000.0\n");
        assert!(matches!(
            PresetSpeedTable::from_toml_str(&extra),
            Err(TableFileError::UnexpectedKey(_))
        ));
        let decreasing = text.replace("12 = 24463.0", "12 = 1.0");
        assert!(matches!(
            PresetSpeedTable::from_toml_str(&decreasing),
            Err(TableFileError::Invalid(TableError::NotIncreasing(12)))
        ));
    }

    proptest! {
        #[test]
        fn update_preserves_ratios_and_monotonicity(
            v_enc_ln in 0.0f64..14.0,
            p_avg in 1.0f64..=12.0,
            weight in 0.0f64..=1.0,
        ) {
            let table = PresetSpeedTable::reference();
            let updated = table.updated(v_enc_ln.exp(), p_avg, weight).unwrap();
            for i in 0..PRESET_COUNT {
                for j in (i + 1)..PRESET_COUNT {
                    let before = table.rates()[i] / table.rates()[j];
                    let after = updated.rates()[i] / updated.rates()[j];
                    prop_assert!((after - before).abs() <= 1e-12 * before.abs());
                }
                prop_assert!(updated.rates()[i] > 0.0);
                if i > 0 {
                    prop_assert!(updated.rates()[i - 1] < updated.rates()[i]);
                }
            }
        }

        #[test]
        fn update_fixed_point(p_avg in 1.0f64..=12.0, weight in 0.0f64..=1.0) {
            // Measuring exactly the predicted speed never moves the table.
            let mut table = PresetSpeedTable::reference();
            for _ in 0..4 {
                let v = table.lookup(p_avg).unwrap();
                let next = table.updated(v, p_avg, weight).unwrap();
                for (a, b) in next.rates().iter().zip(table.rates()) {
                    prop_assert!((a - b).abs() <= 1e-12 * b);
                }
                table = next;
            }
        }

        #[test]
        fn lookup_monotone(a in 1.0f64..=12.0, b in 1.0f64..=12.0) {
            let table = PresetSpeedTable::reference();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(table.lookup(lo).unwrap() <= table.lookup(hi).unwrap());
        }

        #[test]
        fn nearest_preset_scale_invariant(
            target_ln in 2.0f64..11.0,
            factor_ln in -3.0f64..3.0,
            qp in 1u8..=63,
        ) {
            let target = target_ln.exp();
            let factor = factor_ln.exp();
            let qp = Qp::new(qp).unwrap();
            let table = PresetSpeedTable::reference();
            let mut scaled_rates = *table.rates();
            for r in &mut scaled_rates {
                *r *= factor;
            }
            let scaled = PresetSpeedTable::new(scaled_rates).unwrap();
            prop_assert_eq!(
                table.nearest_preset(target, qp).unwrap(),
                scaled.nearest_preset(target * factor, qp).unwrap()
            );
        }
    }
}
