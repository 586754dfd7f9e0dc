use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sarnav::baseline::evaluate_baseline;
use sarnav::config::RunConfig;
use sarnav::dataset::{build_dataset, directory_digest};
use sarnav::distortion::{
    default_magnitudes, measure, sensitivity_sweep, table_mismatches, write_sweep_csv, AnalysisSettings,
    Classification,
};
use sarnav::nav::{ErrorAxis, NavError};
use sarnav::sar::SarImage;
use sarnav::Error;
use serde_json::json;

/// Navigation-error SAR simulation, distortion analysis and dataset
/// generation.
#[derive(Debug, Parser)]
#[command(name = "sarnav", version)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the reference image of one target and its distorted copy.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Injected error component as `axis=value`, e.g. `ct_pos=3`;
        /// repeatable. Unset components are zero.
        #[arg(long = "error", value_name = "AXIS=VALUE")]
        errors: Vec<String>,
        /// Print a digest of the written files.
        #[arg(long)]
        checksum: bool,
    },
    /// Sweep a single error axis and classify the resulting distortions.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_axis)]
        axis: ErrorAxis,
        /// Comma-separated magnitudes; defaults to the built-in sweep.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        magnitudes: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless every row shows the expected effect of its axis.
        #[arg(long)]
        assert: bool,
    },
    /// Generate a training dataset directory.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checksum: bool,
    },
    /// Score the shift-inversion estimator on a dataset's test split.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        /// Optional configuration supplying the analysis settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics JSON destination in addition to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> Result<ErrorAxis, String> {
    ErrorAxis::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = ErrorAxis::ALL.iter().map(|a| a.name()).collect();
        format!("unknown axis `{s}`; expected one of {}", names.join(", "))
    })
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. }
            | Error::NegativeTimeStep(_)
            | Error::NonFiniteError
            | Error::AttitudeTooLarge { .. }
            | Error::TooFew { .. }
            | Error::Format(_)
            | Error::Json(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)
        .map_err(|e| Failure::Validation(format!("config {}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(out: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, Failure> {
    out.or_else(|| cfg.output_dir().map(Path::to_path_buf))
        .ok_or_else(|| Failure::Validation("no output directory: pass --out or set output_dir".into()))
}

fn parse_errors(specs: &[String]) -> Result<NavError, Failure> {
    let mut v = [0.0; 9];
    for spec in specs {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Validation(format!("--error `{spec}`: expected AXIS=VALUE")))?;
        let axis = parse_axis(key.trim()).map_err(|e| Failure::Validation(format!("--error: {e}")))?;
        v[axis.index()] = value
            .trim()
            .parse()
            .map_err(|_| Failure::Validation(format!("--error `{spec}`: value is not a number")))?;
    }
    Ok(NavError::from_array(v)?)
}

fn write_image(path: &Path, img: &SarImage, params: &sarnav::sar::RadarParams) -> CmdResult {
    let mut w = BufWriter::new(File::create(path)?);
    img.write_to(&mut w, params)?;
    w.flush()?;
    Ok(())
}

fn write_magnitude_csv(path: &Path, img: &SarImage) -> CmdResult {
    let mut w = BufWriter::new(File::create(path)?);
    for row in img.magnitude().rows() {
        let line: Vec<String> = row.iter().map(|m| format!("{m:.9e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &sarnav::nav::Trajectory) -> CmdResult {
    let mut w = BufWriter::new(File::create(path)?);
    traj.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_render(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    target: usize,
    errors: &[String],
    checksum: bool,
) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let err = parse_errors(errors)?;
    if target >= cfg.counts.targets {
        return Err(Failure::Validation(format!(
            "--target {target} out of range for {} targets",
            cfg.counts.targets
        )));
    }
    let dir = output_dir(out, &cfg)?;

    let render = cfg.render_target(target)?;
    let distorted = render.distorted(&err)?;
    let measurement = match measure(render.reference(), &distorted, &cfg.analysis) {
        Ok(m) => json!({
            "at_shift_px": m.at_shift,
            "ct_shift_px": m.ct_shift,
            "sharpness_ratio": m.sharpness_ratio,
            "peak_correlation": m.peak_correlation,
            "classification": Classification::of(&m, &cfg.analysis).to_string(),
        }),
        Err(Error::NoRegistration { peak_correlation }) => json!({
            "registration_failed": true,
            "peak_correlation": peak_correlation,
        }),
        Err(e) => return Err(e.into()),
    };

    fs::create_dir_all(&dir)?;
    let params = render.params();
    write_image(&dir.join("reference.sar"), render.reference(), params)?;
    write_image(&dir.join("distorted.sar"), &distorted, params)?;
    write_magnitude_csv(&dir.join("reference_magnitude.csv"), render.reference())?;
    write_magnitude_csv(&dir.join("distorted_magnitude.csv"), &distorted)?;
    let truth = cfg.truth_trajectory()?;
    write_trajectory(&dir.join("truth_trajectory.bin"), &truth)?;
    write_trajectory(&dir.join("estimated_trajectory.bin"), &render.estimated_trajectory(&err))?;
    let summary = json!({
        "target": target,
        "error": err.to_array(),
        "measurement": measurement,
    });
    fs::write(dir.join("measurement.json"), format!("{:#}\n", summary))?;
    println!("{summary:#}");
    if checksum {
        println!("checksum {}", directory_digest(&dir)?);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    seed: Option<u64>,
    axis: ErrorAxis,
    magnitudes: Option<Vec<f64>>,
    target: usize,
    out: Option<PathBuf>,
    assert: bool,
) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let magnitudes = magnitudes.unwrap_or_else(|| default_magnitudes(axis));
    if magnitudes.is_empty() {
        return Err(Failure::Validation("--magnitudes is empty".into()));
    }
    for m in &magnitudes {
        NavError::along(axis, *m)?;
    }
    let render = cfg.render_target(target)?;
    let rows = sensitivity_sweep(&render, axis, &magnitudes, &cfg.analysis)?;
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(&path)?);
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_sweep_csv(&rows, io::stdout().lock())?,
    }
    if assert {
        let bad = table_mismatches(&rows, &cfg.analysis);
        if !bad.is_empty() {
            return Err(Failure::Validation(format!(
                "{} row(s) disagree with the expected effect of {axis}:\n  {}",
                bad.len(),
                bad.join("\n  ")
            )));
        }
        eprintln!("all {} rows match the expected effect of {axis}", rows.len());
    }
    Ok(())
}

fn cmd_build(config: &Path, seed: Option<u64>, out: Option<PathBuf>, checksum: bool) -> CmdResult {
    let cfg = load_config(config, seed)?;
    let dir = output_dir(out, &cfg)?;
    let manifest = build_dataset(&cfg, &dir)?;
    let counts: serde_json::Map<String, serde_json::Value> = manifest
        .splits
        .iter()
        .map(|s| (s.name.clone(), json!({"samples": s.count, "targets": s.target_ids.len()})))
        .collect();
    let summary = json!({
        "directory": dir.display().to_string(),
        "scenario": manifest.scenario,
        "seed": manifest.seed,
        "components": manifest.components,
        "label_mean": manifest.label_mean,
        "label_std": manifest.label_std,
        "splits": counts,
    });
    println!("{summary:#}");
    if checksum {
        println!("checksum {}", directory_digest(&dir)?);
    }
    Ok(())
}

fn cmd_baseline(dataset: &Path, config: Option<PathBuf>, out: Option<PathBuf>) -> CmdResult {
    let settings = match config {
        Some(path) => load_config(&path, None)?.analysis,
        None => AnalysisSettings::default(),
    };
    let metrics = evaluate_baseline(dataset, &settings)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    if let Some(path) = out {
        fs::write(path, format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Render {
            config,
            seed,
            out,
            target,
            errors,
            checksum,
        } => cmd_render(&config, seed, out, target, &errors, checksum),
        Command::Sweep {
            config,
            seed,
            axis,
            magnitudes,
            target,
            out,
            assert,
        } => cmd_sweep(&config, seed, axis, magnitudes, target, out, assert),
        Command::Build {
            config,
            seed,
            out,
            checksum,
        } => cmd_build(&config, seed, out, checksum),
        Command::Baseline { dataset, config, out } => cmd_baseline(&dataset, config, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
