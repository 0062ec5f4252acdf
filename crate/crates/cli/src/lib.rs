//! Command-line front end: `paratrap <command> --config FILE [--out DIR]`.
//!
//! Exit status 0 on success, 1 for usage or configuration errors, 2 when a
//! run fails.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use paratrap::config::{load_config, CheckStatus};
use paratrap::experiments::{run_shots, saturation_check, tof_temperatures};
use paratrap::io::{write_pgm, write_sweep_csv, RunManifest};
use paratrap::{
    find_resonance, heating_rate, run_sweep, trap_frequencies, Error, ModulationSpec, Observable, RunConfig, SweepAxis,
    SweepResult, SweepRow,
};

#[derive(Parser, Debug)]
#[command(name = "paratrap", version, about = "Parametric excitation of atoms in a modulated dipole trap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Survival against modulation frequency.
    Spectrum(Common),
    /// Survival and temperature against modulation time.
    Timesweep(Common),
    /// Survival against modulation depth.
    Depthsweep(Common),
    /// Absorption images after each of the configured modulation times.
    Image(Common),
    /// Check the config and list which preconditions are checked when.
    Validate(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `sweep.seed`).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Run the tool with `argv` (program name first) and return the exit status.
pub fn cli_main(argv: Vec<OsString>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let (name, common) = match &command {
        Command::Spectrum(c) => ("spectrum", c),
        Command::Timesweep(c) => ("timesweep", c),
        Command::Depthsweep(c) => ("depthsweep", c),
        Command::Image(c) => ("image", c),
        Command::Validate(c) => ("validate", c),
    };
    let mut cfg = load_config(&common.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.sweep.seed = seed;
        cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    }
    if common.workers == Some(0) {
        return Err(Failure::Config("--workers must be >= 1".into()));
    }

    let started = now();
    let (outputs, results, seeds) = match command {
        Command::Validate(_) => return validate(&cfg),
        Command::Spectrum(_) => sweep(&cfg, SweepAxis::Frequency, name, common.workers)?,
        Command::Timesweep(_) => sweep(&cfg, SweepAxis::Duration, name, common.workers)?,
        Command::Depthsweep(_) => sweep(&cfg, SweepAxis::Depth, name, common.workers)?,
        Command::Image(_) => image_series(&cfg)?,
    };
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        master_seed: cfg.sweep.seed,
        seeds,
        started,
        finished: now(),
        outputs,
        results,
    };
    let path = cfg.output.dir.join("manifest.toml");
    manifest.write(&path).map_err(Failure::runtime)?;
    for (k, v) in &manifest.results {
        println!("{k} = {v}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let report = cfg.validation_report();
    let mut failed = false;
    for (check, status) in &report {
        println!("{:>20}  {check}", status.to_string());
        failed |= matches!(status, CheckStatus::Failed(_));
    }
    let (fr, fz) = trap_frequencies(&cfg.trap);
    println!(
        "trap: U0 = {:.4e} J ({:.1} µK), f_radial = {:.1} Hz, f_axial = {:.1} Hz",
        cfg.trap.depth_u0,
        cfg.trap.depth_kelvin() * 1e6,
        fr,
        fz
    );
    if failed {
        Err(Failure::Config("config failed validation".into()))
    } else {
        Ok(())
    }
}

type RunOutput = (Vec<String>, Vec<(String, String)>, Vec<u64>);

fn sweep(cfg: &RunConfig, axis: SweepAxis, name: &str, workers: Option<usize>) -> Result<RunOutput, Failure> {
    let spec = cfg.sweep_spec(axis);
    let seeds = (0..spec.repetitions).map(|r| spec.seed_for(r)).collect();
    let result = run_sweep(&spec, workers).map_err(Failure::runtime)?;
    let failures: Vec<&SweepRow> = result.failures().collect();
    for row in &failures {
        log::warn!("point {} rep {} failed: {}", row.value, row.rep, row.error.as_deref().unwrap_or(""));
    }
    if failures.len() == result.rows.len() {
        return Err(Failure::Runtime(format!(
            "every point failed; first error: {}",
            failures[0].error.as_deref().unwrap_or("")
        )));
    }
    let file = format!("{name}.csv");
    write_sweep_csv(&result, &cfg.output.dir.join(&file)).map_err(Failure::runtime)?;

    let mut results = vec![("failed_points".to_string(), failures.len().to_string())];
    let (fr, fz) = trap_frequencies(&cfg.trap);
    results.push(("harmonic_2f_radial_hz".into(), format!("{:.6e}", 2.0 * fr)));
    results.push(("harmonic_2f_axial_hz".into(), format!("{:.6e}", 2.0 * fz)));
    match axis {
        SweepAxis::Frequency => {
            for (obs, key) in [(Observable::Peak, "peak"), (Observable::Total, "total")] {
                results.push(match find_resonance(&result, obs) {
                    Ok(r) => (format!("f_min_{key}_hz"), format!("{:.6e} +- {:.2e}", r.f_min, r.uncertainty)),
                    Err(e) => (format!("f_min_{key}_hz"), format!("unavailable: {e}")),
                });
            }
        }
        SweepAxis::Duration => duration_analysis(cfg, &result, &mut results),
        SweepAxis::Depth => {}
    }
    Ok((vec![file], results, seeds))
}

fn duration_analysis(cfg: &RunConfig, result: &SweepResult, results: &mut Vec<(String, String)>) {
    let t_exp = cfg.imaging.expansion_time;
    match heating_rate(result, t_exp) {
        Ok(h) => results.push((
            "heating_rate_k_per_s".into(),
            format!("{:.4e} +- {:.2e} ({} points)", h.rate, h.stderr, h.points_used),
        )),
        Err(e) => results.push(("heating_rate_k_per_s".into(), format!("unavailable: {e}"))),
    }
    match saturation_check(result, &cfg.trap) {
        Ok(x) => results.push(("saturation_fraction_of_depth".into(), format!("{x:.4}"))),
        Err(e) => results.push(("saturation_fraction_of_depth".into(), format!("unavailable: {e}"))),
    }
    if let Ok(temps) = tof_temperatures(result, t_exp) {
        let list: Vec<String> = temps.iter().map(|(d, t)| format!("{d:.4e}:{t:.4e}")).collect();
        results.push(("tof_temperature_k".into(), list.join(" ")));
    }
}

fn image_series(cfg: &RunConfig) -> Result<RunOutput, Failure> {
    let durations = &cfg.sweep.image_durations;
    let last = durations.iter().cloned().fold(0.0, f64::max);
    if durations.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Failure::Config("sweep.image_durations must be strictly increasing".into()));
    }
    let seed = cfg.sweep_spec(SweepAxis::Duration).seed_for(0);
    let pc = cfg.point_config();
    let modulation = ModulationSpec {
        duration_t: last,
        ..cfg.modulation
    };
    let shots = run_shots(&pc, &modulation, seed, durations).map_err(Failure::runtime)?;
    let reference = run_shots(&pc, &ModulationSpec::none(last), seed, durations).map_err(Failure::runtime)?;

    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for ((&d, shot), refshot) in durations.iter().zip(&shots).zip(&reference) {
        let file = format!("image_{}ms.pgm", format_ms(d));
        write_pgm(&shot.image, &cfg.output.dir.join(&file)).map_err(Failure::runtime)?;
        outputs.push(file);
        rows.push(SweepRow {
            value: d,
            rep: 0,
            seed,
            survival_total: shot.total / refshot.total,
            survival_peak: shot.peak / refshot.peak,
            r_axial: shot.fit.radii.0,
            r_radial: shot.fit.radii.1,
            temperature: shot.temperature,
            n_alive: shot.n_alive,
            converged: shot.fit.converged,
            error: None,
        });
    }
    let table = SweepResult {
        axis: SweepAxis::Duration,
        rows,
        trap: cfg.trap,
        expansion_time: cfg.imaging.expansion_time,
    };
    write_sweep_csv(&table, &cfg.output.dir.join("image.csv")).map_err(Failure::runtime)?;
    outputs.push("image.csv".into());
    Ok((outputs, vec![("images".into(), durations.len().to_string())], vec![seed]))
}

fn format_ms(d: f64) -> String {
    let ms = d * 1e3;
    if (ms - ms.round()).abs() < 1e-9 {
        format!("{}", ms.round() as i64)
    } else {
        format!("{ms:.3}").replace('.', "p")
    }
}

/// Path of the config shipped with the tool, for tests and examples.
pub fn shipped_config() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/paper.toml"))
}
