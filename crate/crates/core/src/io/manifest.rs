use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::MacroWeight;

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn s(text: &str) -> String {
    toml::Value::String(text.to_string()).to_string()
}

fn list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|&x| f(x)).collect::<Vec<_>>().join(", "))
}

/// The resolved config as flat `section.key = value` lines in SI units with
/// every default written out. Floats use the shortest exact representation,
/// so parsing the text back gives an identical [`RunConfig`].
pub fn config_to_toml(cfg: &RunConfig) -> String {
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| lines.push((k.to_string(), v));

    put("trap.depth", f(cfg.trap.depth_u0));
    put("trap.w0", f(cfg.trap.geometry.w0));
    put("trap.z_r", f(cfg.trap.geometry.z_r));
    put("trap.gravity", cfg.trap.gravity_enabled.to_string());
    put("trap.mass", f(cfg.trap.consts.atom_mass));

    let sm = &cfg.sample;
    put("sample.n_atoms", sm.n_atoms.to_string());
    put("sample.temperature", f(sm.temperature));
    put("sample.burn_in", sm.burn_in.to_string());
    put("sample.thinning", sm.thinning.to_string());
    if let Some(p) = sm.proposal_scale_pos {
        put("sample.proposal_scale_pos", f(p));
    }
    if let Some(v) = sm.proposal_scale_vel {
        put("sample.proposal_scale_vel", f(v));
    }
    put("sample.domain_factor", f(sm.domain_factor));

    if let Some(dt) = cfg.integration.dt {
        put("integration.dt", f(dt));
    }
    put("integration.loss_radius_factor", f(cfg.integration.loss_radius_factor));
    put("integration.diag_interval", cfg.integration.diag_interval.to_string());

    put("collisions.enabled", cfg.collisions.is_some().to_string());
    if let Some(c) = &cfg.collisions {
        put("collisions.scattering_length", f(c.scattering_length));
        if let Some(x) = c.cell_size {
            put("collisions.cell_size", f(x));
        }
        if let Some(x) = c.cell_size_axial {
            put("collisions.cell_size_axial", f(x));
        }
        match c.weight {
            MacroWeight::Fixed(w) => put("collisions.macro_weight", f(w)),
            MacroWeight::PeakDensity(n) => put("collisions.peak_density", f(n)),
        }
    }

    let m = &cfg.modulation;
    put("modulation.depth", f(m.depth_h));
    put("modulation.frequency", f(m.freq_f));
    put("modulation.duration", f(m.duration_t));
    put("modulation.phase", f(m.phase0));
    put("modulation.random_phase", cfg.random_phase.to_string());

    let im = &cfg.imaging;
    put("imaging.pixel_size", f(im.pixel_size));
    put("imaging.width", im.width.to_string());
    put("imaging.height", im.height.to_string());
    put("imaging.blur_sigma", f(im.blur_sigma));
    put("imaging.shot_noise", im.shot_noise.to_string());
    put("imaging.expansion_time", f(im.expansion_time));
    put("imaging.box_halfwidth", im.box_halfwidth.to_string());

    let sw = &cfg.sweep;
    put("sweep.frequencies", list(&sw.frequencies));
    put("sweep.durations", list(&sw.durations));
    put("sweep.depths", list(&sw.depths));
    put("sweep.image_durations", list(&sw.image_durations));
    put("sweep.repetitions", sw.repetitions.to_string());
    put("sweep.normalize", sw.normalize.to_string());
    put("sweep.seed", sw.seed.to_string());

    put("output.dir", s(&cfg.output.dir.to_string_lossy()));

    let mut out = String::new();
    for (k, v) in lines {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out
}

/// Record of one run. Its text form is a valid config: replaying it
/// reproduces every CSV and graymap byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    /// Seed of each repetition; every point of a repetition uses it.
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<String>,
    /// Analysis results as `key = value` text, e.g. fitted resonances.
    pub results: Vec<(String, String)>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = config_to_toml(&self.config);
        let mut put = |k: &str, v: String| writeln!(out, "manifest.{k} = {v}").unwrap();
        put("version", s(&self.version));
        put("command", s(&self.command));
        // u64 seeds can exceed the TOML integer range
        put("master_seed", s(&self.master_seed.to_string()));
        put(
            "seeds",
            format!("[{}]", self.seeds.iter().map(|x| s(&x.to_string())).collect::<Vec<_>>().join(", ")),
        );
        put("started", f(self.started));
        put("finished", f(self.finished));
        put(
            "outputs",
            format!("[{}]", self.outputs.iter().map(|o| s(o)).collect::<Vec<_>>().join(", ")),
        );
        for (k, v) in &self.results {
            put(&format!("results.{k}"), s(v));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_file(path, &self.to_text())
    }
}
