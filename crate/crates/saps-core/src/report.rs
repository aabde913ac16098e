//! Grid-experiment reports: per-run records, per-cell aggregation and
//! emission as JSON, CSV and an aligned text table.
//!
//! Reports carry no timestamps or other ambient state, and every collection
//! is an ordered `Vec`, so the same experiment serializes byte-identically
//! on every run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::harness::ExperimentConfig;

/// Output formats a report can be written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Text => "report.txt",
        }
    }
}

/// One closed-loop encode inside the grid.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub class: String,
    pub sequence: usize,
    pub qp: u8,
    pub target_fps: f64,
    /// Seed of this run's per-frame noise stream.
    pub noise_seed: u64,
    /// Difficulty scale drawn for this sequence.
    pub scale: f64,
    /// Achieved overall speed in frames per second.
    pub v_real_fps: f64,
    /// |achieved - target| / target.
    pub rel_error: f64,
    pub initial_preset: u8,
    pub final_preset: u8,
    pub min_preset: u8,
    pub max_preset: u8,
    pub total_cpu_s: f64,
}

/// All runs of one (class, target) cell, aggregated.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub class: String,
    pub width: usize,
    pub height: usize,
    pub target_fps: f64,
    /// Whether the target lies inside the preset range's speed span for
    /// this geometry; unreachable cells are excluded from averages.
    pub reachable: bool,
    pub run_count: usize,
    /// Mean relative speed error across the cell's runs.
    pub eps_v: Option<f64>,
    pub runs: Vec<RunRecord>,
}

/// Mean speed error of one class across its reachable cells.
#[derive(Debug, Clone, Serialize)]
pub struct ClassAverage {
    pub class: String,
    pub eps_v: Option<f64>,
}

/// Full outcome of a grid experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub class_averages: Vec<ClassAverage>,
    /// Mean of per-cell errors over reachable cells.
    pub overall_per_cell: Option<f64>,
    /// Mean of per-run errors over runs in reachable cells.
    pub overall_per_run: Option<f64>,
}

impl Report {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serialization is total");
        out.push('\n');
        out
    }

    /// One CSV row per cell.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("class,width,height,target_fps,reachable,run_count,eps_v\n");
        for cell in &self.cells {
            let eps = cell.eps_v.map_or(String::new(), |e| e.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                cell.class,
                cell.width,
                cell.height,
                cell.target_fps,
                cell.reachable,
                cell.run_count,
                eps
            ));
        }
        out
    }

    /// Aligned table: one row per target, one column per class, cell values
    /// as percent error. Unreachable cells are starred and excluded from
    /// the averages.
    pub fn to_text_string(&self) -> String {
        let classes: Vec<&str> = self
            .class_averages
            .iter()
            .map(|c| c.class.as_str())
            .collect();
        let mut targets: Vec<f64> = Vec::new();
        for cell in &self.cells {
            if !targets.contains(&cell.target_fps) {
                targets.push(cell.target_fps);
            }
        }

        let cell_for = |class: &str, target: f64| {
            self.cells
                .iter()
                .find(|c| c.class == class && c.target_fps == target)
        };
        let fmt_eps = |cell: Option<&CellReport>| -> String {
            match cell {
                Some(c) if !c.reachable => "*".to_string(),
                Some(c) => c
                    .eps_v
                    .map_or("-".to_string(), |e| format!("{:.1}%", 100.0 * e)),
                None => "-".to_string(),
            }
        };

        let mut out = String::from(
            "Relative speed error |achieved - target| / target by class and target\n\n",
        );
        out.push_str(&format!("{:>12}", "target_fps"));
        for class in &classes {
            out.push_str(&format!("{class:>10}"));
        }
        out.push_str(&format!("{:>10}\n", "average"));

        for &target in &targets {
            out.push_str(&format!("{target:>12}"));
            let mut row_errors = Vec::new();
            for class in &classes {
                let cell = cell_for(class, target);
                out.push_str(&format!("{:>10}", fmt_eps(cell)));
                if let Some(c) = cell {
                    if c.reachable {
                        if let Some(e) = c.eps_v {
                            row_errors.push(e);
                        }
                    }
                }
            }
            out.push_str(&format!("{:>10}\n", fmt_mean(&row_errors)));
        }

        out.push_str(&format!("{:>12}", "all"));
        let mut class_errors = Vec::new();
        for class in &classes {
            let avg = self
                .class_averages
                .iter()
                .find(|c| c.class == *class)
                .and_then(|c| c.eps_v);
            out.push_str(&format!(
                "{:>10}",
                avg.map_or("-".to_string(), |e| format!("{:.1}%", 100.0 * e))
            ));
            if let Some(e) = avg {
                class_errors.push(e);
            }
        }
        out.push_str(&format!(
            "{:>10}\n\n",
            self.overall_per_cell
                .map_or("-".to_string(), |e| format!("{:.1}%", 100.0 * e))
        ));

        out.push_str("Cells marked * have targets outside the preset speed range and are\n");
        out.push_str("excluded from all averages.\n");
        if let Some(err) = self.overall_per_run {
            out.push_str(&format!(
                "Run-weighted overall error: {:.1}% over {} runs\n",
                100.0 * err,
                self.reachable_run_count()
            ));
        }
        out
    }

    fn reachable_run_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.reachable)
            .map(|c| c.run_count)
            .sum()
    }

    /// Writes the requested formats into `dir` (created if needed), one
    /// file per format, atomically (write to a temp name, then rename).
    pub fn write_to(&self, dir: &Path, formats: &[ReportFormat]) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for &format in formats {
            let content = match format {
                ReportFormat::Json => self.to_json_string(),
                ReportFormat::Csv => self.to_csv_string(),
                ReportFormat::Text => self.to_text_string(),
            };
            let path = dir.join(format.file_name());
            let tmp = dir.join(format!("{}.tmp", format.file_name()));
            fs::write(&tmp, content)?;
            fs::rename(&tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn fmt_mean(errors: &[f64]) -> String {
    if errors.is_empty() {
        return "-".to_string();
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    format!("{:.1}%", 100.0 * mean)
}
