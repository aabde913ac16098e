//! Replay of measured per-preset frame costs from CSV traces.
//!
//! A trace row records how long one frame took at each preset that was
//! actually measured. Presets nobody measured are filled in at load time by
//! interpolating log-cost linearly in the preset index, so replay can price
//! any preset the controller picks.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::sim::{CostSource, SimError};
use crate::table::{PRESET_COUNT, PRESET_MAX, PRESET_MIN};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace header is missing required column \"{0}\"")]
    MissingColumn(&'static str),
    #[error("trace header has unknown column \"{0}\" (expected frame, width, height, p1..p12)")]
    UnknownColumn(String),
    #[error("trace must record at least two preset columns, got {0}")]
    TooFewPresets(usize),
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: expected frame index {expected}, got {got}")]
    NonContiguousFrame {
        line: usize,
        expected: usize,
        got: String,
    },
    #[error("line {line}: frame dimensions {width}x{height} differ from first row")]
    InconsistentDims {
        line: usize,
        width: usize,
        height: usize,
    },
    #[error("line {line}: frame dimensions must be positive")]
    EmptyFrame { line: usize },
    #[error("line {line}: column {column} has invalid value \"{value}\"")]
    BadValue {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: cost must be strictly positive and finite, got {cost} at p{preset}")]
    BadCost { line: usize, preset: u8, cost: f64 },
    #[error(
        "line {line}: costs must strictly decrease with the preset (p{faster} is not cheaper \
         than p{slower})"
    )]
    NotDecreasing { line: usize, slower: u8, faster: u8 },
}

/// A loaded trace: per-frame costs for all twelve presets, with measured
/// gaps already filled in.
#[derive(Debug, Clone)]
pub struct FrameTrace {
    width: usize,
    height: usize,
    costs: Vec<[f64; PRESET_COUNT]>,
}

impl FrameTrace {
    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, TraceError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);

        // Map each column to its meaning, by header name.
        let headers = csv.headers()?.clone();
        let mut frame_col = None;
        let mut width_col = None;
        let mut height_col = None;
        let mut preset_cols: Vec<(usize, u8)> = Vec::new();
        for (idx, name) in headers.iter().enumerate() {
            match name {
                "frame" => frame_col = Some(idx),
                "width" => width_col = Some(idx),
                "height" => height_col = Some(idx),
                _ => match name.strip_prefix('p').and_then(|n| n.parse::<u8>().ok()) {
                    Some(p) if (PRESET_MIN..=PRESET_MAX).contains(&p) => preset_cols.push((idx, p)),
                    _ => return Err(TraceError::UnknownColumn(name.to_string())),
                },
            }
        }
        let frame_col = frame_col.ok_or(TraceError::MissingColumn("frame"))?;
        let width_col = width_col.ok_or(TraceError::MissingColumn("width"))?;
        let height_col = height_col.ok_or(TraceError::MissingColumn("height"))?;
        if preset_cols.len() < 2 {
            return Err(TraceError::TooFewPresets(preset_cols.len()));
        }
        preset_cols.sort_by_key(|&(_, p)| p);

        let mut width = 0;
        let mut height = 0;
        let mut costs = Vec::new();
        for (row_idx, record) in csv.records().enumerate() {
            let record = record?;
            // Header occupies line 1; data starts at line 2.
            let line = row_idx + 2;

            let parse_usize = |idx: usize, column: &str| -> Result<usize, TraceError> {
                let raw = record.get(idx).unwrap_or("");
                raw.parse().map_err(|_| TraceError::BadValue {
                    line,
                    column: column.to_string(),
                    value: raw.to_string(),
                })
            };
            let frame = record.get(frame_col).unwrap_or("");
            if frame.parse::<usize>() != Ok(row_idx) {
                return Err(TraceError::NonContiguousFrame {
                    line,
                    expected: row_idx,
                    got: frame.to_string(),
                });
            }
            let w = parse_usize(width_col, "width")?;
            let h = parse_usize(height_col, "height")?;
            if row_idx == 0 {
                if w == 0 || h == 0 {
                    return Err(TraceError::EmptyFrame { line });
                }
                width = w;
                height = h;
            } else if (w, h) != (width, height) {
                return Err(TraceError::InconsistentDims {
                    line,
                    width: w,
                    height: h,
                });
            }

            let mut measured = Vec::with_capacity(preset_cols.len());
            for &(idx, preset) in &preset_cols {
                let raw = record.get(idx).unwrap_or("");
                let cost: f64 = raw.parse().map_err(|_| TraceError::BadValue {
                    line,
                    column: format!("p{preset}"),
                    value: raw.to_string(),
                })?;
                if cost <= 0.0 || !cost.is_finite() {
                    return Err(TraceError::BadCost { line, preset, cost });
                }
                if let Some(&(prev_preset, prev_cost)) = measured.last() {
                    if cost >= prev_cost {
                        return Err(TraceError::NotDecreasing {
                            line,
                            slower: prev_preset,
                            faster: preset,
                        });
                    }
                }
                measured.push((preset, cost));
            }
            costs.push(fill_presets(&measured));
        }
        if costs.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Self {
            width,
            height,
            costs,
        })
    }

    /// Cost of `frame` at `preset`, both range-checked.
    pub fn replay_cost(&self, frame: usize, preset: u8) -> Result<f64, SimError> {
        if frame >= self.costs.len() {
            return Err(SimError::FrameOutOfRange {
                frame,
                n_total: self.costs.len(),
            });
        }
        if !(PRESET_MIN..=PRESET_MAX).contains(&preset) {
            return Err(SimError::PresetOutOfRange(preset));
        }
        Ok(self.costs[frame][usize::from(preset) - 1])
    }

    /// Per-frame costs across all presets, gaps filled.
    pub fn frame_costs(&self, frame: usize) -> Option<&[f64; PRESET_COUNT]> {
        self.costs.get(frame)
    }
}

/// Expands measured (preset, cost) pairs to all twelve presets: linear
/// interpolation of log-cost in the preset index between measurements, and
/// linear extrapolation of the end segments beyond them.
fn fill_presets(measured: &[(u8, f64)]) -> [f64; PRESET_COUNT] {
    debug_assert!(measured.len() >= 2);
    let pts: Vec<(f64, f64)> = measured
        .iter()
        .map(|&(p, c)| (f64::from(p), c.ln()))
        .collect();
    let mut out = [0.0; PRESET_COUNT];
    for (i, slot) in out.iter_mut().enumerate() {
        let p = (i + 1) as f64;
        // Segment whose span covers p, or the nearest end segment.
        let seg = pts
            .windows(2)
            .position(|w| p <= w[1].0)
            .unwrap_or(pts.len() - 2);
        let (p0, ln0) = pts[seg];
        let (p1, ln1) = pts[seg + 1];
        let t = (p - p0) / (p1 - p0);
        *slot = (ln0 + t * (ln1 - ln0)).exp();
    }
    for &(p, c) in measured {
        // Measured points survive exactly; interpolation only fills gaps.
        out[usize::from(p) - 1] = c;
    }
    out
}

impl CostSource for FrameTrace {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn n_total(&self) -> usize {
        self.costs.len()
    }

    fn cost(&self, frame: usize, preset: u8) -> Result<f64, SimError> {
        self.replay_cost(frame, preset)
    }
}
