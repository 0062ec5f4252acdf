//! Experiment families: frequency spectra, modulation-time sweeps and depth
//! sweeps, each point paired with an unmodulated reference shot that shares
//! its seed and hold time. Plus the analyses run on the resulting curves.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collisions::{CollisionSpec, RB87_SCATTERING_LENGTH};
use crate::dynamics::{evolve_with_checkpoints, IntegrationSpec};
use crate::error::{Error, Result};
use crate::imaging::{expand, fit_gaussian, integrated_intensity, peak_intensity, render, temperature_from_expansion, CloudImage, GaussFit, ImageSpec};
use crate::physics::{ModulationSpec, TrapSpec};
use crate::sampler::{measure_temperature, peak_density, sample_thermal, Ensemble, SampleSpec};
use crate::stats::{linear_fit, mean, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Frequency,
    Duration,
    Depth,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Frequency => "frequency",
            SweepAxis::Duration => "duration",
            SweepAxis::Depth => "depth",
        }
    }

    pub fn apply(self, modulation: &ModulationSpec, value: f64) -> ModulationSpec {
        let mut m = *modulation;
        match self {
            SweepAxis::Frequency => m.freq_f = value,
            SweepAxis::Duration => m.duration_t = value,
            SweepAxis::Depth => m.depth_h = value,
        }
        m
    }
}

/// How the DSMC macro-particle weight is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MacroWeight {
    Fixed(f64),
    /// Physical peak density (m^-3) the sampled cloud should represent.
    PeakDensity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionSettings {
    pub scattering_length: f64,
    /// `None`: `w0 / 4`.
    pub cell_size: Option<f64>,
    /// `None`: `z_R / 10`.
    pub cell_size_axial: Option<f64>,
    pub weight: MacroWeight,
}

impl Default for CollisionSettings {
    fn default() -> Self {
        CollisionSettings {
            scattering_length: RB87_SCATTERING_LENGTH,
            cell_size: None,
            cell_size_axial: None,
            weight: MacroWeight::PeakDensity(6e19),
        }
    }
}

/// Everything needed to run one shot apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointConfig {
    pub trap: TrapSpec,
    /// Initial cloud; its seed is replaced by the point seed.
    pub sample: SampleSpec,
    pub modulation: ModulationSpec,
    /// Draw the modulation phase uniformly per run from the point seed.
    pub random_phase: bool,
    /// Fixed step; `None` applies the default rule per drive frequency.
    pub dt: Option<f64>,
    pub loss_radius_factor: f64,
    pub diag_interval: usize,
    pub collisions: Option<CollisionSettings>,
    pub imaging: ImageSpec,
}

impl PointConfig {
    pub fn new(trap: TrapSpec, sample: SampleSpec, modulation: ModulationSpec) -> Self {
        PointConfig {
            trap,
            sample,
            modulation,
            random_phase: false,
            dt: None,
            loss_radius_factor: 4.0,
            diag_interval: 1000,
            collisions: None,
            imaging: ImageSpec::default(),
        }
    }

    pub fn integration(&self, modulation: &ModulationSpec) -> IntegrationSpec {
        IntegrationSpec {
            dt: self.dt.unwrap_or_else(|| IntegrationSpec::default_dt(&self.trap, modulation)),
            loss_radius_factor: self.loss_radius_factor,
            diag_interval: self.diag_interval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trap.validate()?;
        self.sample.validate(&self.trap)?;
        self.modulation.validate()?;
        self.integration(&self.modulation).validate(&self.trap, &self.modulation)?;
        self.imaging.validate()?;
        if let Some(c) = &self.collisions {
            let spec = self.collision_spec(c, 1.0, 0);
            spec.validate()?;
            match c.weight {
                MacroWeight::Fixed(w) if !(w >= 1.0) => {
                    return Err(Error::invalid("collisions", "macro_weight must be >= 1"));
                }
                MacroWeight::PeakDensity(n) if !(n.is_finite() && n > 0.0) => {
                    return Err(Error::invalid("collisions", "physical peak density must be > 0"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn collision_spec(&self, c: &CollisionSettings, weight: f64, seed: u64) -> CollisionSpec {
        let mut spec = CollisionSpec::for_trap(&self.trap, weight, seed);
        spec.scattering_length = c.scattering_length;
        if let Some(s) = c.cell_size {
            spec.cell_size = s;
        }
        if let Some(s) = c.cell_size_axial {
            spec.cell_size_axial = s;
        }
        spec
    }

    fn collisions_for(&self, ens: &Ensemble, seed: u64) -> Result<Option<CollisionSpec>> {
        let Some(c) = &self.collisions else {
            return Ok(None);
        };
        let weight = match c.weight {
            MacroWeight::Fixed(w) => w,
            MacroWeight::PeakDensity(n) => n / peak_density(ens, &self.trap)?,
        };
        if weight < 1.0 {
            return Err(Error::invalid(
                "collisions",
                format!("macro weight {weight:.3} < 1: more simulated atoms than the physical density implies"),
            ));
        }
        Ok(Some(self.collision_spec(c, weight, mix_seed(seed, 0xC011))))
    }
}

/// Analysis of one released, expanded and imaged cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub image: CloudImage,
    pub fit: GaussFit,
    pub peak: f64,
    pub total: f64,
    /// Kinetic temperature at release, K (0 with fewer than two atoms).
    pub temperature: f64,
    pub n_alive: usize,
}

fn image_shot(ens: &Ensemble, cfg: &PointConfig) -> Result<Shot> {
    let temperature = measure_temperature(ens, &cfg.trap).unwrap_or(0.0);
    let mut cloud = ens.clone();
    expand(&mut cloud, cfg.imaging.expansion_time, &cfg.trap)?;
    let image = render(&cloud, &cfg.imaging)?;
    let fit = fit_gaussian(&image)?;
    let peak = peak_intensity(&image, &fit, cfg.imaging.box_halfwidth)?;
    let total = integrated_intensity(&image);
    let (ext_z, ext_x) = cfg.imaging.extent();
    if fit.converged && (ext_z < 4.0 * fit.radii.0 || ext_x < 4.0 * fit.radii.1) {
        log::warn!(
            "image extent {:.2e} x {:.2e} m covers fewer than 4 fitted radii ({:.2e}, {:.2e})",
            ext_z,
            ext_x,
            fit.radii.0,
            fit.radii.1
        );
    }
    Ok(Shot {
        image,
        fit,
        peak,
        total,
        temperature,
        n_alive: ens.n_alive(),
    })
}

fn modulation_for_seed(cfg: &PointConfig, modulation: &ModulationSpec, seed: u64) -> ModulationSpec {
    let mut m = *modulation;
    if cfg.random_phase {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF4A5E));
        m.phase0 = 2.0 * PI * rng.random::<f64>();
    }
    m
}

/// Evolve one cloud for `modulation.duration_t` (rounded to whole steps) and
/// image it at each of `checkpoint_durations`, which must be increasing and
/// not exceed the run duration.
pub fn run_shots(
    cfg: &PointConfig,
    modulation: &ModulationSpec,
    seed: u64,
    checkpoint_durations: &[f64],
) -> Result<Vec<Shot>> {
    let modulation = modulation_for_seed(cfg, modulation, seed);
    let ispec = cfg.integration(&modulation);
    ispec.validate(&cfg.trap, &modulation)?;
    let n_steps = ispec.steps_for(modulation.duration_t);
    let quantized = ModulationSpec {
        duration_t: n_steps as f64 * ispec.dt,
        ..modulation
    };
    let checkpoints: Vec<usize> = checkpoint_durations.iter().map(|&d| ispec.steps_for(d)).collect();

    let sample = SampleSpec { seed, ..cfg.sample.clone() };
    let mut ens = sample_thermal(&cfg.trap, &sample)?;
    let collisions = cfg.collisions_for(&ens, seed)?;
    let mut shots = Vec::with_capacity(checkpoints.len());
    evolve_with_checkpoints(&mut ens, &cfg.trap, &quantized, &ispec, collisions.as_ref(), n_steps, &checkpoints, |_, e| {
        shots.push(image_shot(e, cfg)?);
        Ok(())
    })?;
    Ok(shots)
}

/// A single shot at the configured modulation.
pub fn run_shot(cfg: &PointConfig, modulation: &ModulationSpec, seed: u64) -> Result<Shot> {
    let mut shots = run_shots(cfg, modulation, seed, &[modulation.duration_t])?;
    Ok(shots.pop().expect("one checkpoint"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub rep: usize,
    pub seed: u64,
    pub survival_total: f64,
    pub survival_peak: f64,
    pub r_axial: f64,
    pub r_radial: f64,
    /// Kinetic temperature of the surviving atoms at release, K.
    pub temperature: f64,
    pub n_alive: usize,
    pub converged: bool,
    /// Set when the point failed; numeric fields are then NaN.
    #[serde(default)]
    pub error: Option<String>,
}

impl SweepRow {
    fn from_shots(value: f64, rep: usize, seed: u64, shot: &Shot, reference: &Shot, normalize: bool) -> Self {
        let (st, sp) = if normalize {
            (shot.total / reference.total, shot.peak / reference.peak)
        } else {
            (shot.total, shot.peak)
        };
        SweepRow {
            value,
            rep,
            seed,
            survival_total: st,
            survival_peak: sp,
            r_axial: shot.fit.radii.0,
            r_radial: shot.fit.radii.1,
            temperature: shot.temperature,
            n_alive: shot.n_alive,
            converged: shot.fit.converged,
            error: None,
        }
    }

    fn failed(value: f64, rep: usize, seed: u64, err: &Error) -> Self {
        SweepRow {
            value,
            rep,
            seed,
            survival_total: f64::NAN,
            survival_peak: f64::NAN,
            r_axial: f64::NAN,
            r_radial: f64::NAN,
            temperature: f64::NAN,
            n_alive: 0,
            converged: false,
            error: Some(err.to_string()),
        }
    }
}

/// Run one swept point: the modulated shot and its unmodulated reference
/// with the same seed and hold time.
pub fn run_point(cfg: &PointConfig, axis: SweepAxis, value: f64, seed: u64) -> Result<SweepRow> {
    let modulation = axis.apply(&cfg.modulation, value);
    modulation.validate()?;
    let shot = run_shot(cfg, &modulation, seed)?;
    let reference = run_shot(cfg, &ModulationSpec::none(modulation.duration_t), seed)?;
    Ok(SweepRow::from_shots(value, 0, seed, &shot, &reference, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: PointConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub normalize: bool,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.values.is_empty() {
            return Err(Error::invalid("experiments", "sweep values must not be empty"));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("experiments", "sweep values must be strictly increasing"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("experiments", "repetitions must be >= 1"));
        }
        for &v in &self.values {
            self.axis.apply(&self.base.modulation, v).validate()?;
        }
        Ok(())
    }

    /// Seed of repetition `rep`. Every swept value of a repetition starts
    /// from the same cloud, so neighbouring points differ only by the drive.
    pub fn seed_for(&self, rep: usize) -> u64 {
        mix_seed(self.master_seed, rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    /// Ordered by value, then repetition.
    pub rows: Vec<SweepRow>,
    pub trap: TrapSpec,
    pub expansion_time: f64,
}

/// Mean and spread over repetitions of one swept value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSummary {
    pub value: f64,
    pub survival_total: f64,
    pub survival_total_sd: f64,
    pub survival_peak: f64,
    pub survival_peak_sd: f64,
    pub r_axial: f64,
    pub r_radial: f64,
    pub temperature: f64,
    pub n_alive: f64,
}

impl SweepResult {
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.rows.iter().map(|r| r.value).collect();
        v.dedup();
        v
    }

    /// Per-value means over successful repetitions.
    pub fn summary(&self) -> Vec<PointSummary> {
        self.values()
            .into_iter()
            .filter_map(|value| {
                let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.value == value && r.error.is_none()).collect();
                if rows.is_empty() {
                    return None;
                }
                let col = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let st = col(|r| r.survival_total);
                let sp = col(|r| r.survival_peak);
                Some(PointSummary {
                    value,
                    survival_total: mean(&st),
                    survival_total_sd: std_dev(&st),
                    survival_peak: mean(&sp),
                    survival_peak_sd: std_dev(&sp),
                    r_axial: mean(&col(|r| r.r_axial)),
                    r_radial: mean(&col(|r| r.r_radial)),
                    temperature: mean(&col(|r| r.temperature)),
                    n_alive: mean(&col(|r| r.n_alive as f64)),
                })
            })
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// Execute every (value, repetition) point. Failed points are kept as rows
/// with `error` set. With `workers`, runs on a dedicated pool of that size.
pub fn run_sweep(spec: &SweepSpec, workers: Option<usize>) -> Result<SweepResult> {
    spec.validate()?;
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid("experiments", format!("cannot start worker pool: {e}")))?;
            pool.install(|| sweep_inner(spec))
        }
        None => sweep_inner(spec),
    }
}

fn sweep_inner(spec: &SweepSpec) -> Result<SweepResult> {
    let reps: Vec<usize> = (0..spec.repetitions).collect();
    let mut rows: Vec<SweepRow> = match spec.axis {
        SweepAxis::Duration => reps
            .par_iter()
            .flat_map_iter(|&rep| duration_rows(spec, rep))
            .collect(),
        SweepAxis::Frequency | SweepAxis::Depth => {
            // the reference only depends on the seed and hold time
            let references: Vec<Result<Shot>> = reps
                .par_iter()
                .map(|&rep| run_shot(&spec.base, &ModulationSpec::none(spec.base.modulation.duration_t), spec.seed_for(rep)))
                .collect();
            let jobs: Vec<(usize, f64)> = reps
                .iter()
                .flat_map(|&rep| spec.values.iter().map(move |&v| (rep, v)))
                .collect();
            jobs.par_iter()
                .map(|&(rep, value)| {
                    let seed = spec.seed_for(rep);
                    let result = references[rep].as_ref().map_err(clone_err).and_then(|reference| {
                        let m = spec.axis.apply(&spec.base.modulation, value);
                        let shot = run_shot(&spec.base, &m, seed)?;
                        Ok(SweepRow::from_shots(value, rep, seed, &shot, reference, spec.normalize))
                    });
                    result.unwrap_or_else(|e| {
                        log::error!("point {value} rep {rep} failed: {e}");
                        SweepRow::failed(value, rep, seed, &e)
                    })
                })
                .collect()
        }
    };
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.rep.cmp(&b.rep)));
    Ok(SweepResult {
        axis: spec.axis,
        rows,
        trap: spec.base.trap,
        expansion_time: spec.base.imaging.expansion_time,
    })
}

fn clone_err(e: &Error) -> Error {
    Error::invalid("experiments", format!("reference shot failed: {e}"))
}

/// One long modulated run and one long reference run, imaged at every
/// swept duration. Equivalent to separate runs per duration because the
/// states of a shorter run are a prefix of the longer one.
fn duration_rows(spec: &SweepSpec, rep: usize) -> Vec<SweepRow> {
    let seed = spec.seed_for(rep);
    let longest = *spec.values.last().expect("non-empty");
    let modulated = ModulationSpec {
        duration_t: longest,
        ..spec.base.modulation
    };
    let (a, b) = rayon::join(
        || run_shots(&spec.base, &modulated, seed, &spec.values),
        || run_shots(&spec.base, &ModulationSpec::none(longest), seed, &spec.values),
    );
    match (a, b) {
        (Ok(shots), Ok(refs)) => spec
            .values
            .iter()
            .zip(shots.iter().zip(&refs))
            .map(|(&v, (s, r))| SweepRow::from_shots(v, rep, seed, s, r, spec.normalize))
            .collect(),
        (Err(e), _) | (_, Err(e)) => {
            log::error!("duration sweep rep {rep} failed: {e}");
            spec.values.iter().map(|&v| SweepRow::failed(v, rep, seed, &e)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Peak,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceEstimate {
    /// Frequency of the survival minimum, Hz.
    pub f_min: f64,
    /// `1 - survival` at the fitted minimum.
    pub depth_of_dip: f64,
    /// One-sigma uncertainty of `f_min` from the fit covariance, Hz.
    pub uncertainty: f64,
    pub method: String,
}

/// Locate the survival minimum of a frequency sweep: discrete minimum of the
/// per-frequency mean, refined by a least-squares parabola through the five
/// points centred on it.
pub fn find_resonance(result: &SweepResult, observable: Observable) -> Result<ResonanceEstimate> {
    let summary = result.summary();
    let xs: Vec<f64> = summary.iter().map(|s| s.value).collect();
    let ys: Vec<f64> = summary
        .iter()
        .map(|s| match observable {
            Observable::Peak => s.survival_peak,
            Observable::Total => s.survival_total,
        })
        .collect();
    find_minimum(&xs, &ys)
}

/// Parabolic five-point minimum of a sampled curve.
pub fn find_minimum(xs: &[f64], ys: &[f64]) -> Result<ResonanceEstimate> {
    if xs.len() < 5 {
        return Err(Error::Insufficient(format!("need >= 5 swept frequencies, have {}", xs.len())));
    }
    let i = ys
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    if i < 2 || i + 2 >= xs.len() {
        return Err(Error::NotBracketed(format!("minimum at the sweep edge ({} Hz)", xs[i])));
    }
    let x0 = xs[i];
    let scale = (xs[i + 2] - xs[i - 2]) / 4.0;
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    let window = i - 2..=i + 2;
    for k in window.clone() {
        let u = (xs[k] - x0) / scale;
        let row = Vector3::new(u * u, u, 1.0);
        ata += row * row.transpose();
        aty += row * ys[k];
    }
    let inv = ata
        .try_inverse()
        .ok_or_else(|| Error::NotBracketed("degenerate frequency grid".into()))?;
    let coef = inv * aty;
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    if !(a > 0.0) {
        return Err(Error::NotBracketed("no interior minimum (curve not convex near its lowest point)".into()));
    }
    let ssr: f64 = window
        .clone()
        .map(|k| {
            let u = (xs[k] - x0) / scale;
            let r = ys[k] - (a * u * u + b * u + c);
            r * r
        })
        .sum();
    let s2 = ssr / 2.0;
    let cov = inv * s2;
    let u_min = -b / (2.0 * a);
    // delta method for u = -b / 2a
    let (du_da, du_db) = (b / (2.0 * a * a), -1.0 / (2.0 * a));
    let var_u = du_da * du_da * cov[(0, 0)] + 2.0 * du_da * du_db * cov[(0, 1)] + du_db * du_db * cov[(1, 1)];
    let lo = (xs[i - 2] - x0) / scale;
    let hi = (xs[i + 2] - x0) / scale;
    let u_clamped = u_min.clamp(lo, hi);
    let y_min = a * u_clamped * u_clamped + b * u_clamped + c;
    Ok(ResonanceEstimate {
        f_min: x0 + u_clamped * scale,
        depth_of_dip: 1.0 - y_min,
        uncertainty: var_u.max(0.0).sqrt() * scale,
        method: "five-point parabola about the discrete minimum".into(),
    })
}

/// Heating-rate estimate from a duration sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingRate {
    /// K/s.
    pub rate: f64,
    /// K/s.
    pub stderr: f64,
    /// Leading durations used in the fit.
    pub points_used: usize,
}

/// Time-of-flight temperature per swept value from the mean fitted radial
/// radius, treating the in-trap size as negligible against the expanded one.
pub fn tof_temperatures(result: &SweepResult, t_exp: f64) -> Result<Vec<(f64, f64)>> {
    let kb = result.trap.consts.boltzmann_k;
    let m = result.trap.mass();
    result
        .summary()
        .into_iter()
        .map(|s| {
            let sigma = s.r_radial / SQRT_2;
            Ok((s.value, temperature_from_expansion(0.0, 0.0, sigma, t_exp, m, kb)?))
        })
        .collect()
}

/// Slope of temperature against modulation time over the pre-saturation
/// part of a duration sweep. The fit window ends where the local
/// three-point slope falls below 20% of the initial (first four points)
/// slope.
pub fn heating_rate(duration_sweep: &SweepResult, t_exp: f64) -> Result<HeatingRate> {
    if duration_sweep.axis != SweepAxis::Duration {
        return Err(Error::invalid("experiments", "heating rate needs a duration sweep"));
    }
    let temps = tof_temperatures(duration_sweep, t_exp)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = temps.into_iter().unzip();
    heating_rate_from_series(&xs, &ys)
}

pub fn heating_rate_from_series(durations: &[f64], temperatures: &[f64]) -> Result<HeatingRate> {
    let n = durations.len();
    if n < 4 {
        return Err(Error::Insufficient(format!("need >= 4 durations, have {n}")));
    }
    let first = linear_fit(&durations[..4], &temperatures[..4])
        .ok_or_else(|| Error::Insufficient("degenerate durations".into()))?;
    let initial = first.slope;
    let mut end = n;
    // without a resolved initial rise there is no knee to look for
    if initial > 2.0 * first.slope_stderr {
        for k in 4..n {
            let local = linear_fit(&durations[k - 2..=k], &temperatures[k - 2..=k]).map(|f| f.slope).unwrap_or(0.0);
            if local < 0.2 * initial {
                end = k - 1;
                break;
            }
        }
    }
    if end < 4 {
        return Err(Error::Insufficient(format!("only {end} pre-saturation durations")));
    }
    let fit = linear_fit(&durations[..end], &temperatures[..end]).expect("checked length");
    Ok(HeatingRate {
        rate: fit.slope,
        stderr: fit.slope_stderr,
        points_used: end,
    })
}

/// Saturated time-of-flight temperature as a fraction of the trap depth,
/// `k_B T_sat / U0`, from the last three durations.
pub fn saturation_check(duration_sweep: &SweepResult, trap: &TrapSpec) -> Result<f64> {
    let temps = tof_temperatures(duration_sweep, duration_sweep.expansion_time)?;
    let ts: Vec<f64> = temps.into_iter().map(|(_, t)| t).collect();
    saturation_from_series(&ts, trap)
}

pub fn saturation_from_series(temperatures: &[f64], trap: &TrapSpec) -> Result<f64> {
    if temperatures.len() < 3 {
        return Err(Error::NotSaturated("fewer than three durations".into()));
    }
    let tail = &temperatures[temperatures.len() - 3..];
    let m = mean(tail);
    let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    if !((max - min) / m < 0.05) {
        return Err(Error::NotSaturated(format!(
            "last three temperatures vary by {:.1}%",
            100.0 * (max - min) / m
        )));
    }
    Ok(m * trap.consts.boltzmann_k / trap.depth_u0)
}

/// splitmix64-style seed derivation.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::BeamGeometry;
    use approx::assert_relative_eq;

    fn trap() -> TrapSpec {
        TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_dip_located() {
        let xs: Vec<f64> = (0..15).map(|i| 2000.0 + 50.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 0.6 * (-((x - 2400.0) / 150.0f64).powi(2)).exp()).collect();
        let r = find_minimum(&xs, &ys).unwrap();
        assert!((r.f_min - 2400.0).abs() < 50.0, "{r:?}");
        assert!(r.depth_of_dip > 0.5 && r.depth_of_dip < 0.7);
        // an exact parabola is recovered exactly
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 + 1e-6 * (x - 2412.0).powi(2)).collect();
        let r = find_minimum(&xs, &ys).unwrap();
        assert_relative_eq!(r.f_min, 2412.0, max_relative = 1e-12);
        assert!(r.uncertainty < 1e-6);
    }

    #[test]
    fn monotone_curve_is_not_bracketed() {
        let xs: Vec<f64> = (0..10).map(|i| 1000.0 + 100.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - x / 1e4).collect();
        assert!(matches!(find_minimum(&xs, &ys), Err(Error::NotBracketed(_))));
        assert!(matches!(find_minimum(&xs[..4], &ys[..4]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn synthetic_heating_rate() {
        let ds: Vec<f64> = (1..=12).map(|i| i as f64 * 0.02).collect();
        let ts: Vec<f64> = ds.iter().map(|d| 65e-6 + 800e-6 * d).collect();
        let h = heating_rate_from_series(&ds, &ts).unwrap();
        assert_relative_eq!(h.rate, 800e-6, max_relative = 0.02);
        assert_eq!(h.points_used, 12);
        // saturating series: the fit stops at the knee
        let ts: Vec<f64> = ds.iter().map(|&d| 65e-6 + 800e-6 * d.min(0.12)).collect();
        let h = heating_rate_from_series(&ds, &ts).unwrap();
        assert_relative_eq!(h.rate, 800e-6, max_relative = 0.02);
        assert!(h.points_used <= 7, "{h:?}");
        // flat: no drive, slope zero within its error
        let ts: Vec<f64> = ds.iter().enumerate().map(|(i, _)| 65e-6 * (1.0 + 0.01 * ((i * 7) % 3) as f64 - 0.01)).collect();
        let h = heating_rate_from_series(&ds, &ts).unwrap();
        assert!(h.rate.abs() <= 3.0 * h.stderr + 1e-12, "{h:?}");
        assert!(heating_rate_from_series(&ds[..3], &ts[..3]).is_err());
    }

    #[test]
    fn saturation_tail() {
        let t = trap();
        let tsat = 0.35 * t.depth_kelvin();
        let ts = [100e-6, 150e-6, tsat, tsat, tsat];
        assert_relative_eq!(saturation_from_series(&ts, &t).unwrap(), 0.35, max_relative = 1e-12);
        let rising = [100e-6, 120e-6, 140e-6, 160e-6];
        assert!(matches!(saturation_from_series(&rising, &t), Err(Error::NotSaturated(_))));
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(5, 3), mix_seed(5, 3));
    }

    fn small_config() -> PointConfig {
        let t = trap();
        let mut cfg = PointConfig::new(t, SampleSpec::new(400, 0.05 * t.depth_kelvin(), 0), ModulationSpec::new(0.15, 2500.0, 5e-3).unwrap());
        cfg.imaging = ImageSpec { pixel_size: 20e-6, ..ImageSpec::default() };
        cfg
    }

    #[test]
    fn unmodulated_point_is_its_own_reference() {
        let cfg = small_config();
        let row = run_point(&cfg, SweepAxis::Depth, 0.0, 11).unwrap();
        assert_eq!(row.survival_total, 1.0);
        assert_eq!(row.survival_peak, 1.0);
    }

    #[test]
    fn single_value_sweep_has_one_row() {
        let spec = SweepSpec {
            base: small_config(),
            axis: SweepAxis::Frequency,
            values: vec![2500.0],
            repetitions: 1,
            normalize: true,
            master_seed: 3,
        };
        let r = run_sweep(&spec, Some(1)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(r.rows[0].error.is_none());
        let bad = SweepSpec { values: vec![2.0, 1.0], ..spec.clone() };
        assert!(run_sweep(&bad, None).is_err());
        let none = SweepSpec { repetitions: 0, ..spec };
        assert!(run_sweep(&none, None).is_err());
    }

    #[test]
    fn duration_sweep_matches_individual_points() {
        let cfg = small_config();
        let spec = SweepSpec {
            base: cfg.clone(),
            axis: SweepAxis::Duration,
            values: vec![1e-3, 2.5e-3, 4e-3],
            repetitions: 2,
            normalize: true,
            master_seed: 8,
        };
        let r = run_sweep(&spec, None).unwrap();
        assert_eq!(r.rows.len(), 6);
        for row in &r.rows {
            let single = run_point(&cfg, SweepAxis::Duration, row.value, row.seed).unwrap();
            assert_eq!(single.survival_peak, row.survival_peak);
            assert_eq!(single.survival_total, row.survival_total);
            assert_eq!(single.r_radial, row.r_radial);
            assert_eq!(single.temperature, row.temperature);
        }
    }
}
