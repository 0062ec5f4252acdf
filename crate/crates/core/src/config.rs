//! Run configuration: TOML text with unit-suffixed quantities.
//!
//! ```toml
//! [trap]
//! radial_frequency = "1.25 kHz"
//! w0 = "55 µm"
//! z_r = "750 µm"
//!
//! [modulation]
//! depth = 0.15
//! frequency = "2.5 kHz"
//! duration = "200 ms"
//! ```
//!
//! Every section other than `[trap]` is optional. A bare number is read in SI
//! units. A written run manifest is itself a valid config; its `[manifest]`
//! table is ignored on input.

use std::fmt;
use std::marker::PhantomData;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use crate::collisions::RB87_SCATTERING_LENGTH;
use crate::error::{Error, Result};
use crate::experiments::{CollisionSettings, MacroWeight, PointConfig, SweepAxis, SweepSpec};
use crate::imaging::ImageSpec;
use crate::physics::{BeamGeometry, ModulationSpec, PhysConsts, TrapSpec};
use crate::sampler::SampleSpec;
use crate::units::{parse_quantity, Dimension};

trait Dim {
    const DIM: Dimension;
}

macro_rules! dims {
    ($($name:ident => $d:ident),*) => {
        $(
            #[derive(Debug, Clone, Copy)]
            struct $name;
            impl Dim for $name {
                const DIM: Dimension = Dimension::$d;
            }
        )*
    };
}

dims!(Freq => Frequency, Len => Length, Time => Time, Temp => Temperature, Energy => Energy);

/// A number or a `"<number> <unit>"` string, stored in SI.
#[derive(Debug, Clone, Copy)]
struct Q<D>(f64, PhantomData<D>);

impl<'de, D: Dim> Deserialize<'de> for Q<D> {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> std::result::Result<Self, De::Error> {
        struct V<D>(PhantomData<D>);
        impl<D: Dim> Visitor<'_> for V<D> {
            type Value = Q<D>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a {} as a number in {} or a string such as \"1.5 {}\"", D::DIM, D::DIM.si_unit(), D::DIM.si_unit())
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Q<D>, E> {
                Ok(Q(v, PhantomData))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Q<D>, E> {
                Ok(Q(v as f64, PhantomData))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Q<D>, E> {
                Ok(Q(v as f64, PhantomData))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Q<D>, E> {
                parse_quantity(v, D::DIM).map(|x| Q(x, PhantomData)).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V(PhantomData))
    }
}

/// A list of values or an inclusive `{ start, stop, step }` range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, bound = "D: Dim")]
enum Values<D: Dim> {
    List(Vec<Q<D>>),
    Range { start: Q<D>, stop: Q<D>, step: Q<D> },
}

/// Dimensionless counterpart of [`Values`].
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Plain {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

fn expand_range(start: f64, stop: f64, step: f64) -> std::result::Result<Vec<f64>, String> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(format!("range needs step > 0 and stop >= start (got {start}..{stop} by {step})"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err("range has more than 100000 values".into());
    }
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

impl<D: Dim> Values<D> {
    fn resolve(&self) -> std::result::Result<Vec<f64>, String> {
        match self {
            Values::List(v) => Ok(v.iter().map(|q| q.0).collect()),
            Values::Range { start, stop, step } => expand_range(start.0, stop.0, step.0),
        }
    }
}

impl Plain {
    fn resolve(&self) -> std::result::Result<Vec<f64>, String> {
        match self {
            Plain::List(v) => Ok(v.clone()),
            Plain::Range { start, stop, step } => expand_range(*start, *stop, *step),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    trap: RawTrap,
    #[serde(default)]
    sample: RawSample,
    #[serde(default)]
    integration: RawIntegration,
    #[serde(default)]
    collisions: RawCollisions,
    #[serde(default)]
    modulation: RawModulation,
    #[serde(default)]
    imaging: RawImaging,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    #[allow(dead_code)]
    manifest: Option<toml::Table>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrap {
    radial_frequency: Option<Q<Freq>>,
    depth: Option<Q<Energy>>,
    depth_temperature: Option<Q<Temp>>,
    w0: Q<Len>,
    z_r: Q<Len>,
    #[serde(default)]
    gravity: bool,
    /// kg.
    mass: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    n_atoms: Option<usize>,
    temperature: Option<Q<Temp>>,
    /// Temperature as a fraction of the trap depth `U0 / k_B`.
    temperature_fraction: Option<f64>,
    burn_in: Option<usize>,
    thinning: Option<usize>,
    proposal_scale_pos: Option<Q<Len>>,
    /// m/s.
    proposal_scale_vel: Option<f64>,
    domain_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegration {
    dt: Option<Q<Time>>,
    loss_radius_factor: Option<f64>,
    diag_interval: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCollisions {
    #[serde(default)]
    enabled: bool,
    scattering_length: Option<Q<Len>>,
    cell_size: Option<Q<Len>>,
    cell_size_axial: Option<Q<Len>>,
    macro_weight: Option<f64>,
    /// Physical peak density, m^-3.
    peak_density: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModulation {
    depth: Option<f64>,
    frequency: Option<Q<Freq>>,
    duration: Option<Q<Time>>,
    /// rad.
    phase: Option<f64>,
    #[serde(default)]
    random_phase: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImaging {
    pixel_size: Option<Q<Len>>,
    width: Option<usize>,
    height: Option<usize>,
    blur_sigma: Option<Q<Len>>,
    shot_noise: Option<bool>,
    expansion_time: Option<Q<Time>>,
    box_halfwidth: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    frequencies: Option<Values<Freq>>,
    durations: Option<Values<Time>>,
    depths: Option<Plain>,
    image_durations: Option<Values<Time>>,
    repetitions: Option<usize>,
    normalize: Option<bool>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationSettings {
    /// `None`: the default per-frequency step.
    pub dt: Option<f64>,
    pub loss_radius_factor: f64,
    pub diag_interval: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub frequencies: Vec<f64>,
    pub durations: Vec<f64>,
    pub depths: Vec<f64>,
    /// Modulation times of the `image` series.
    pub image_durations: Vec<f64>,
    pub repetitions: usize,
    pub normalize: bool,
    pub seed: u64,
}

impl SweepSettings {
    pub fn values(&self, axis: SweepAxis) -> &[f64] {
        match axis {
            SweepAxis::Frequency => &self.frequencies,
            SweepAxis::Duration => &self.durations,
            SweepAxis::Depth => &self.depths,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

/// Fully resolved configuration, all defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trap: TrapSpec,
    pub sample: SampleSpec,
    pub integration: IntegrationSettings,
    pub collisions: Option<CollisionSettings>,
    pub modulation: ModulationSpec,
    pub random_phase: bool,
    pub imaging: ImageSpec,
    pub sweep: SweepSettings,
    pub output: OutputSettings,
}

/// Default physical peak density of the represented cloud, m^-3.
pub const DEFAULT_PEAK_DENSITY: f64 = 6e19;

impl RunConfig {
    pub fn point_config(&self) -> PointConfig {
        PointConfig {
            trap: self.trap,
            sample: self.sample.clone(),
            modulation: self.modulation,
            random_phase: self.random_phase,
            dt: self.integration.dt,
            loss_radius_factor: self.integration.loss_radius_factor,
            diag_interval: self.integration.diag_interval,
            collisions: self.collisions,
            imaging: self.imaging,
        }
    }

    pub fn sweep_spec(&self, axis: SweepAxis) -> SweepSpec {
        SweepSpec {
            base: self.point_config(),
            axis,
            values: self.sweep.values(axis).to_vec(),
            repetitions: self.sweep.repetitions,
            normalize: self.sweep.normalize,
            master_seed: self.sweep.seed,
        }
    }

    /// Check every precondition that does not depend on a sampled cloud.
    pub fn validate(&self) -> Result<()> {
        self.point_config().validate()?;
        for axis in [SweepAxis::Frequency, SweepAxis::Duration, SweepAxis::Depth] {
            self.sweep_spec(axis).validate()?;
        }
        if self.sweep.seed > i64::MAX as u64 {
            return Err(Error::invalid("experiments", "master seed must be < 2^63"));
        }
        if self.sweep.image_durations.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::invalid("cli-io", "image durations must be >= 0"));
        }
        Ok(())
    }

    /// One line per precondition: checked now, or only checkable while
    /// running.
    pub fn validation_report(&self) -> Vec<(String, CheckStatus)> {
        let ok = |r: Result<()>| match r {
            Ok(()) => CheckStatus::Ok,
            Err(e) => CheckStatus::Failed(e.to_string()),
        };
        let pc = self.point_config();
        let mut report = vec![
            ("trap: depth, geometry and constants positive".to_string(), ok(self.trap.validate())),
            ("sampler: n_atoms, temperature below depth, thinning".to_string(), ok(self.sample.validate(&self.trap))),
            ("physics: modulation depth in [0, 1), frequency and duration".to_string(), ok(self.modulation.validate())),
            (
                "dynamics: dt bound and loss radius".to_string(),
                ok(pc.integration(&self.modulation).validate(&self.trap, &self.modulation)),
            ),
            ("imaging: pixel size, frame and central box".to_string(), ok(self.imaging.validate())),
        ];
        for axis in [SweepAxis::Frequency, SweepAxis::Duration, SweepAxis::Depth] {
            report.push((
                format!("experiments: {} sweep values and repetitions", axis.name()),
                ok(self.sweep_spec(axis).validate()),
            ));
        }
        if self.collisions.is_some() {
            report.push(("collisions: scattering length and cell sizes".into(), ok(pc.validate())));
            report.push(("collisions: macro weight >= 1 (depends on the sampled cloud)".into(), CheckStatus::Runtime));
            report.push(("collisions: cloud stays inside the cell grid".into(), CheckStatus::Runtime));
        }
        report.push(("sampler: Metropolis acceptance rate in [5%, 95%]".into(), CheckStatus::Runtime));
        report.push(("dynamics: state stays finite".into(), CheckStatus::Runtime));
        report.push(("imaging: Gaussian fit converges (flagged per row, not fatal)".into(), CheckStatus::Runtime));
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Ok,
    Runtime,
    Failed(String),
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckStatus::Ok => f.write_str("ok"),
            CheckStatus::Runtime => f.write_str("checked at run time"),
            CheckStatus::Failed(m) => write!(f, "FAILED: {m}"),
        }
    }
}

/// Parse and resolve a config. `origin` names the source in error messages.
pub fn parse_config_from(text: &str, origin: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| config_error(text, origin, &e))?;
    let cfg = resolve(raw).map_err(|message| Error::Config {
        path: origin.to_string(),
        line: 0,
        column: 0,
        message,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_from(text, "<config>")
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_from(&text, &path.display().to_string())
}

fn config_error(text: &str, origin: &str, e: &toml::de::Error) -> Error {
    let (line, column, section) = match e.span() {
        Some(span) => {
            let (l, c) = line_col(text, span.start);
            (l, c, section_at(text, span.start))
        }
        None => (0, 0, None),
    };
    let message = match unknown_key(e.message()) {
        Some((key, expected)) => {
            let place = section.map(|s| format!(" in [{s}]")).unwrap_or_default();
            match nearest(&key, &expected) {
                Some(best) => format!("unknown key `{key}`{place}; did you mean `{best}`?"),
                None => format!("unknown key `{key}`{place}"),
            }
        }
        None => e.message().trim().to_string(),
    };
    Error::Config {
        path: origin.to_string(),
        line,
        column,
        message,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

fn section_at(text: &str, offset: usize) -> Option<String> {
    text[..offset.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

/// Pull the offending key and the valid alternatives out of serde's
/// "unknown field `x`, expected one of `a`, `b`" message.
fn unknown_key(message: &str) -> Option<(String, Vec<String>)> {
    let rest = message.split("unknown field `").nth(1)?;
    let key = rest.split('`').next()?.to_string();
    let expected_part = rest.split_once("expected")?.1;
    let expected = expected_part.split('`').skip(1).step_by(2).map(str::to_string).collect();
    Some((key, expected))
}

fn nearest(key: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(key, c), c))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.clone())
}

fn resolve(raw: RawConfig) -> std::result::Result<RunConfig, String> {
    let mut consts = PhysConsts::default();
    if let Some(m) = raw.trap.mass {
        consts.atom_mass = m;
    }
    let geometry = BeamGeometry {
        w0: raw.trap.w0.0,
        z_r: raw.trap.z_r.0,
    };
    let depth = match (raw.trap.radial_frequency, raw.trap.depth, raw.trap.depth_temperature) {
        (Some(f), None, None) => crate::physics::u0_from_radial_frequency(f.0, geometry.w0, consts.atom_mass),
        (None, Some(u), None) => u.0,
        (None, None, Some(t)) => t.0 * consts.boltzmann_k,
        (None, None, None) => return Err("[trap] needs one of radial_frequency, depth, depth_temperature".into()),
        _ => return Err("[trap] takes only one of radial_frequency, depth, depth_temperature".into()),
    };
    let trap = TrapSpec {
        depth_u0: depth,
        geometry,
        gravity_enabled: raw.trap.gravity,
        consts,
    };

    let s = raw.sample;
    let temperature = match (s.temperature, s.temperature_fraction) {
        (Some(t), None) => t.0,
        (None, Some(x)) => x * depth / consts.boltzmann_k,
        (None, None) => 0.13 * depth / consts.boltzmann_k,
        _ => return Err("[sample] takes only one of temperature, temperature_fraction".into()),
    };
    let mut sample = SampleSpec::new(s.n_atoms.unwrap_or(10_000), temperature, 0);
    sample.burn_in = s.burn_in.unwrap_or(sample.burn_in);
    sample.thinning = s.thinning.unwrap_or(sample.thinning);
    sample.proposal_scale_pos = s.proposal_scale_pos.map(|q| q.0);
    sample.proposal_scale_vel = s.proposal_scale_vel;
    sample.domain_factor = s.domain_factor.unwrap_or(sample.domain_factor);

    let integration = IntegrationSettings {
        dt: raw.integration.dt.map(|q| q.0),
        loss_radius_factor: raw.integration.loss_radius_factor.unwrap_or(4.0),
        diag_interval: raw.integration.diag_interval.unwrap_or(1000),
    };

    let c = raw.collisions;
    let collisions = c.enabled.then(|| CollisionSettings {
        scattering_length: c.scattering_length.map(|q| q.0).unwrap_or(RB87_SCATTERING_LENGTH),
        cell_size: c.cell_size.map(|q| q.0),
        cell_size_axial: c.cell_size_axial.map(|q| q.0),
        weight: match c.macro_weight {
            Some(w) => MacroWeight::Fixed(w),
            None => MacroWeight::PeakDensity(c.peak_density.unwrap_or(DEFAULT_PEAK_DENSITY)),
        },
    });
    if c.enabled && c.macro_weight.is_some() && c.peak_density.is_some() {
        return Err("[collisions] takes only one of macro_weight, peak_density".into());
    }

    let m = raw.modulation;
    let modulation = ModulationSpec {
        depth_h: m.depth.unwrap_or(0.15),
        freq_f: m.frequency.map(|q| q.0).unwrap_or(2500.0),
        duration_t: m.duration.map(|q| q.0).unwrap_or(0.2),
        phase0: m.phase.unwrap_or(0.0),
    };

    let defaults = ImageSpec::default();
    let i = raw.imaging;
    let imaging = ImageSpec {
        pixel_size: i.pixel_size.map(|q| q.0).unwrap_or(defaults.pixel_size),
        width: i.width.unwrap_or(defaults.width),
        height: i.height.unwrap_or(defaults.height),
        blur_sigma: i.blur_sigma.map(|q| q.0).unwrap_or(defaults.blur_sigma),
        shot_noise: i.shot_noise.unwrap_or(defaults.shot_noise),
        expansion_time: i.expansion_time.map(|q| q.0).unwrap_or(defaults.expansion_time),
        box_halfwidth: i.box_halfwidth.unwrap_or(defaults.box_halfwidth),
    };

    let w = raw.sweep;
    let ms = |v: &[f64]| v.iter().map(|x| x * 1e-3).collect::<Vec<f64>>();
    let sweep = SweepSettings {
        frequencies: w.frequencies.map(|v| v.resolve()).transpose()?.unwrap_or_else(|| expand_range(1600.0, 3000.0, 50.0).expect("valid")),
        durations: w
            .durations
            .map(|v| v.resolve())
            .transpose()?
            .unwrap_or_else(|| ms(&[5.0, 10.0, 20.0, 30.0, 50.0, 75.0, 100.0, 150.0, 200.0, 250.0, 300.0])),
        depths: w.depths.map(|v| v.resolve()).transpose()?.unwrap_or_else(|| vec![0.0, 0.05, 0.1, 0.15, 0.2]),
        image_durations: w.image_durations.map(|v| v.resolve()).transpose()?.unwrap_or_else(|| ms(&[5.0, 25.0, 100.0, 300.0])),
        repetitions: w.repetitions.unwrap_or(3),
        normalize: w.normalize.unwrap_or(true),
        seed: w.seed.unwrap_or(1),
    };

    Ok(RunConfig {
        trap,
        sample,
        integration,
        collisions,
        modulation,
        random_phase: m.random_phase,
        imaging,
        sweep,
        output: OutputSettings {
            dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        },
    })
}
