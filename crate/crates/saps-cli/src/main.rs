//! `saps`: run preset-switching experiments from the command line.
//!
//! Subcommands: `grid` sweeps the experiment grid and reports speed errors,
//! `validate-estimator` traces the speed estimate against ground truth on a
//! fixed-preset encode, `replay` drives the closed loop over a recorded
//! cost trace, and `show-table` prints the preset speed model.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use saps_core::controller::{Controller, ControllerConfig};
use saps_core::harness::{
    assemble_report, execute_run, plan_runs, validate_estimator, ExperimentConfig,
    ValidationConfig, ValidationSeries,
};
use saps_core::report::ReportFormat;
use saps_core::sim::{run_closed_loop, CostSource, EncodeResult};
use saps_core::table::{PresetSpeedTable, Qp};
use saps_core::trace::FrameTrace;

#[derive(Parser)]
#[command(
    name = "saps",
    version,
    about = "Speed-adaptive preset switching: experiments, validation and replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment grid and report achieved speed errors.
    Grid(GridArgs),
    /// Compare the pipelined speed estimate against ground truth.
    ValidateEstimator(ValidateArgs),
    /// Drive the closed loop over a recorded per-preset cost trace.
    Replay(ReplayArgs),
    /// Print the preset speed table, optionally scaled to a quantizer.
    ShowTable(ShowTableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
    Text,
    /// Every format; requires --out.
    All,
}

impl OutputFormat {
    fn report_formats(self) -> Vec<ReportFormat> {
        match self {
            OutputFormat::Json => vec![ReportFormat::Json],
            OutputFormat::Csv => vec![ReportFormat::Csv],
            OutputFormat::Text => vec![ReportFormat::Text],
            OutputFormat::All => ReportFormat::ALL.to_vec(),
        }
    }
}

/// Knobs shared by every subcommand that runs the controller.
#[derive(Debug, Args)]
struct ControllerArgs {
    /// Blend weight of each speed measurement into the table (0 disables).
    #[arg(long)]
    update_weight: Option<f64>,
    /// Completed frames between table updates.
    #[arg(long)]
    update_cadence: Option<usize>,
    /// Check single-step bounds before double-step bounds (doubles never fire).
    #[arg(long, alias = "literal-alg1")]
    literal_branch_order: bool,
    /// Consider a faster preset when needed/current speed exceeds this.
    #[arg(long)]
    up_threshold: Option<f64>,
    /// Consider a slower preset when needed/current speed falls below this.
    #[arg(long)]
    down_threshold: Option<f64>,
    /// Step one preset faster only while needed/candidate speed exceeds this.
    #[arg(long)]
    up_keep: Option<f64>,
    /// Jump two presets faster when needed/candidate speed exceeds this.
    #[arg(long)]
    up_double: Option<f64>,
    /// Step one preset slower only while needed/candidate speed stays below this.
    #[arg(long)]
    down_keep: Option<f64>,
    /// Jump two presets slower when needed/candidate speed falls below this.
    #[arg(long)]
    down_double: Option<f64>,
}

impl ControllerArgs {
    fn apply(&self, cfg: &mut ControllerConfig) {
        if let Some(w) = self.update_weight {
            cfg.update_weight = w;
        }
        if let Some(c) = self.update_cadence {
            cfg.update_cadence = c;
        }
        if self.literal_branch_order {
            cfg.literal_branch_order = true;
        }
        if let Some(v) = self.up_threshold {
            cfg.up_threshold = v;
        }
        if let Some(v) = self.down_threshold {
            cfg.down_threshold = v;
        }
        if let Some(v) = self.up_keep {
            cfg.up_keep = v;
        }
        if let Some(v) = self.up_double {
            cfg.up_double = v;
        }
        if let Some(v) = self.down_keep {
            cfg.down_keep = v;
        }
        if let Some(v) = self.down_double {
            cfg.down_double = v;
        }
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Experiment config file (TOML); built-in defaults if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory to write report files into.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format (stdout when --out is absent).
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the pipeline buffer size.
    #[arg(long)]
    buffer_size: Option<usize>,
    /// Preset speed table override file (TOML, keys "1" through "12").
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    controller: ControllerArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 360)]
    height: usize,
    /// Fixed preset to encode at.
    #[arg(long, default_value_t = 6)]
    preset: u8,
    #[arg(long, default_value_t = 160)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    buffer_size: usize,
    #[arg(long, default_value_t = 27)]
    qp: u8,
    /// Log-normal spread of per-frame cost noise (0 disables).
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Difficulty scale of the synthetic sequence.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory to write validation files into.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Trace CSV recorded from real encodes.
    #[arg(long)]
    trace: PathBuf,
    /// Overall speed to aim for, in frames per second.
    #[arg(long)]
    target_fps: f64,
    #[arg(long, default_value_t = 27)]
    qp: u8,
    #[arg(long, default_value_t = 16)]
    buffer_size: usize,
    /// Preset speed table override file (TOML, keys "1" through "12").
    #[arg(long)]
    table: Option<PathBuf>,
    /// Directory to write replay files into.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    #[command(flatten)]
    controller: ControllerArgs,
}

#[derive(Debug, Args)]
struct ShowTableArgs {
    /// Preset speed table override file (TOML, keys "1" through "12").
    #[arg(long)]
    table: Option<PathBuf>,
    /// Also show speeds scaled to this quantizer.
    #[arg(long)]
    qp: Option<u8>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Grid(args) => grid(args),
        Command::ValidateEstimator(args) => validate(args),
        Command::Replay(args) => replay(args),
        Command::ShowTable(args) => show_table(args),
    }
}

fn load_table(path: Option<&Path>) -> Result<PresetSpeedTable> {
    match path {
        Some(path) => PresetSpeedTable::load(path)
            .with_context(|| format!("loading table override {}", path.display())),
        None => Ok(PresetSpeedTable::reference()),
    }
}

fn parse_qp(qp: u8) -> Result<Qp> {
    Qp::new(qp).map_err(|e| anyhow::anyhow!(e))
}

/// Rejects --format all on stdout; files need a directory.
fn check_stdout_format(out: Option<&PathBuf>, format: OutputFormat) -> Result<()> {
    if out.is_none() && format == OutputFormat::All {
        bail!("--format all writes multiple files; pass --out DIR or pick one format");
    }
    Ok(())
}

fn grid(args: GridArgs) -> Result<()> {
    check_stdout_format(args.out.as_ref(), args.format)?;
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading experiment config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(buffer) = args.buffer_size {
        cfg.buffer_size = buffer;
    }
    args.controller.apply(&mut cfg.controller);
    cfg.validate().context("experiment config rejected")?;
    let table = load_table(args.table.as_deref())?;

    // Runs are independent by construction; execute them in parallel and
    // reassemble in plan order so reports stay deterministic.
    let plan = plan_runs(&cfg);
    let runs = plan
        .par_iter()
        .map(|&spec| execute_run(&cfg, &table, spec))
        .collect::<Result<Vec<_>, _>>()
        .context("grid run failed")?;
    let report = assemble_report(&cfg, &table, runs);

    match &args.out {
        Some(dir) => {
            let written = report
                .write_to(dir, &args.format.report_formats())
                .with_context(|| format!("writing reports to {}", dir.display()))?;
            print!("{}", report.to_text_string());
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        None => {
            let rendered = match args.format {
                OutputFormat::Json => report.to_json_string(),
                OutputFormat::Csv => report.to_csv_string(),
                OutputFormat::Text => report.to_text_string(),
                OutputFormat::All => unreachable!("rejected above"),
            };
            print!("{rendered}");
        }
    }
    Ok(())
}

fn validation_csv(series: &ValidationSeries) -> String {
    let mut out = String::from("completed,estimated_fps,actual_fps,ratio\n");
    for p in &series.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.completed, p.estimated_fps, p.actual_fps, p.ratio
        ));
    }
    out
}

fn validation_text(series: &ValidationSeries) -> String {
    let cfg = &series.config;
    let mut out = format!(
        "Speed estimate vs. truth: {}x{}, preset {}, qp {}, {} frames, buffer {}\n\n",
        cfg.width, cfg.height, cfg.preset, cfg.qp, cfg.frames, cfg.buffer_size
    );
    out.push_str(&format!(
        "{:>10}{:>16}{:>14}{:>8}\n",
        "completed", "estimated_fps", "actual_fps", "ratio"
    ));
    // Print a readable subset: every completion early (while the estimate
    // moves fast), then every tenth.
    for p in &series.points {
        if p.completed <= 2 * cfg.buffer_size || p.completed % 10 == 0 {
            out.push_str(&format!(
                "{:>10}{:>16.4}{:>14.4}{:>8.3}\n",
                p.completed, p.estimated_fps, p.actual_fps, p.ratio
            ));
        }
    }
    if let Some(last) = series.points.last() {
        out.push_str(&format!(
            "\nfinal ratio {:.6} after {} completions\n",
            last.ratio, last.completed
        ));
    }
    out
}

fn validate(args: ValidateArgs) -> Result<()> {
    check_stdout_format(args.out.as_ref(), args.format)?;
    let cfg = ValidationConfig {
        width: args.width,
        height: args.height,
        preset: args.preset,
        frames: args.frames,
        buffer_size: args.buffer_size,
        qp: args.qp,
        noise_sigma: args.sigma,
        scale: args.scale,
        seed: args.seed,
    };
    let series = validate_estimator(&cfg).context("estimator validation failed")?;

    let render = |format: OutputFormat| -> String {
        match format {
            OutputFormat::Json => {
                let mut s =
                    serde_json::to_string_pretty(&series).expect("series serialization is total");
                s.push('\n');
                s
            }
            OutputFormat::Csv => validation_csv(&series),
            OutputFormat::Text => validation_text(&series),
            OutputFormat::All => unreachable!("expanded by caller"),
        }
    };
    emit(args.out.as_deref(), args.format, "validation", render)
}

fn replay_json(result: &EncodeResult) -> String {
    let mut usage = serde_json::Map::new();
    for preset in 1..=12u8 {
        let count = result.records.iter().filter(|r| r.preset == preset).count();
        if count > 0 {
            usage.insert(format!("p{preset}"), serde_json::json!(count));
        }
    }
    let summary = serde_json::json!({
        "frames": result.n_total,
        "width": result.width,
        "height": result.height,
        "target_fps": result.target_fps,
        "achieved_fps": result.v_real_fps,
        "t_target": result.t_target,
        "total_cpu": result.total_cpu,
        "miss_rel": (result.v_real_fps - result.target_fps) / result.target_fps,
        "preset_usage": usage,
        "records": result.records,
    });
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serialization is total");
    s.push('\n');
    s
}

fn replay_csv(result: &EncodeResult) -> String {
    let mut out =
        String::from("frame,preset,cost,completed_t_cpu,estimated_fps,budget_fps,true_avg_fps\n");
    for r in &result.records {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.frame,
            r.preset,
            r.cost,
            r.completed_t_cpu,
            opt(r.estimated_fps),
            opt(r.budget_fps),
            r.true_avg_fps
        ));
    }
    out
}

fn replay_text(result: &EncodeResult) -> String {
    let mut out = format!(
        "Replayed {} frames at {}x{}, target {} fps\n",
        result.n_total, result.width, result.height, result.target_fps
    );
    out.push_str(&format!(
        "achieved {:.4} fps in {:.3}s CPU (budget {:.3}s), miss {:+.2}%\n\n",
        result.v_real_fps,
        result.total_cpu,
        result.t_target,
        100.0 * (result.v_real_fps - result.target_fps) / result.target_fps
    ));
    out.push_str("preset usage:\n");
    for preset in 1..=12u8 {
        let count = result.records.iter().filter(|r| r.preset == preset).count();
        if count > 0 {
            out.push_str(&format!("  p{preset:<2} {count:>5} frames\n"));
        }
    }
    out
}

fn replay(args: ReplayArgs) -> Result<()> {
    check_stdout_format(args.out.as_ref(), args.format)?;
    let trace = FrameTrace::load(&args.trace)
        .with_context(|| format!("loading trace {}", args.trace.display()))?;
    let table = load_table(args.table.as_deref())?;
    let qp = parse_qp(args.qp)?;
    let mut controller_cfg = ControllerConfig::default();
    args.controller.apply(&mut controller_cfg);
    let mut controller = Controller::initialize(
        args.target_fps,
        trace.width(),
        trace.height(),
        qp,
        table,
        controller_cfg,
    )
    .context("controller rejected the replay setup")?;
    let result = run_closed_loop(&trace, &mut controller, args.target_fps, args.buffer_size)
        .context("replay failed")?;

    let render = |format: OutputFormat| -> String {
        match format {
            OutputFormat::Json => replay_json(&result),
            OutputFormat::Csv => replay_csv(&result),
            OutputFormat::Text => replay_text(&result),
            OutputFormat::All => unreachable!("expanded by caller"),
        }
    };
    emit(args.out.as_deref(), args.format, "replay", render)
}

fn table_json(table: &PresetSpeedTable, qp: Option<Qp>) -> String {
    let mut map = serde_json::Map::new();
    for preset in 1..=12u8 {
        let rate = match qp {
            Some(qp) => qp.speed_scale() * table.rate(preset),
            None => table.rate(preset),
        };
        map.insert(preset.to_string(), rate.into());
    }
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map))
        .expect("table serialization is total");
    s.push('\n');
    s
}

fn table_csv(table: &PresetSpeedTable, qp: Option<Qp>) -> String {
    let mut out = String::from("preset,kpps\n");
    for preset in 1..=12u8 {
        let rate = match qp {
            Some(qp) => qp.speed_scale() * table.rate(preset),
            None => table.rate(preset),
        };
        out.push_str(&format!("{preset},{rate}\n"));
    }
    out
}

fn table_text(table: &PresetSpeedTable, qp: Option<Qp>) -> String {
    let mut out = String::from("preset speeds in kilopixels per second\n\n");
    match qp {
        Some(qp) => out.push_str(&format!(
            "{:>7}{:>12}{:>14}\n",
            "preset",
            "kpps",
            format!("kpps@qp{}", qp.value())
        )),
        None => out.push_str(&format!("{:>7}{:>12}\n", "preset", "kpps")),
    }
    for preset in 1..=12u8 {
        match qp {
            Some(qp) => out.push_str(&format!(
                "{preset:>7}{:>12}{:>14.1}\n",
                table.rate(preset),
                qp.speed_scale() * table.rate(preset)
            )),
            None => out.push_str(&format!("{preset:>7}{:>12}\n", table.rate(preset))),
        }
    }
    out.push_str(&format!(
        "\nfastest/slowest span: {:.1}x\n",
        table.span_ratio()
    ));
    out
}

fn show_table(args: ShowTableArgs) -> Result<()> {
    let table = load_table(args.table.as_deref())?;
    let qp = args.qp.map(parse_qp).transpose()?;
    let rendered = match args.format {
        OutputFormat::Json => table_json(&table, qp),
        OutputFormat::Csv => table_csv(&table, qp),
        OutputFormat::Text | OutputFormat::All => table_text(&table, qp),
    };
    print!("{rendered}");
    Ok(())
}

/// Writes one file per requested format into `dir`, or prints the single
/// format to stdout when no directory was given.
fn emit(
    dir: Option<&Path>,
    format: OutputFormat,
    stem: &str,
    render: impl Fn(OutputFormat) -> String,
) -> Result<()> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let formats = match format {
                OutputFormat::All => {
                    vec![OutputFormat::Json, OutputFormat::Csv, OutputFormat::Text]
                }
                other => vec![other],
            };
            for f in formats {
                let ext = match f {
                    OutputFormat::Json => "json",
                    OutputFormat::Csv => "csv",
                    OutputFormat::Text => "txt",
                    OutputFormat::All => unreachable!(),
                };
                let path = dir.join(format!("{stem}.{ext}"));
                let tmp = dir.join(format!("{stem}.{ext}.tmp"));
                let mut file = std::fs::File::create(&tmp)
                    .with_context(|| format!("creating {}", tmp.display()))?;
                file.write_all(render(f).as_bytes())?;
                drop(file);
                std::fs::rename(&tmp, &path)?;
                println!("wrote {}", path.display());
            }
        }
        None => print!("{}", render(format)),
    }
    Ok(())
}
