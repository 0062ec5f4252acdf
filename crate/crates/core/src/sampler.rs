//! Thermal initial states in the full anharmonic trap.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::outside_trap;
use crate::error::{Error, Result};
use crate::physics::{potential, trap_frequencies, ModulationSpec, TrapSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n_atoms: usize,
    /// Temperature, K.
    pub temperature: f64,
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    /// Radial position step of the random walk, m. `None` uses 0.3 of the
    /// harmonic radial cloud width; the axial step is scaled by the trap
    /// aspect ratio.
    pub proposal_scale_pos: Option<f64>,
    /// Velocity step, m/s. `None` uses 0.3 of the thermal velocity.
    pub proposal_scale_vel: Option<f64>,
    /// Samples are confined to `rho <= k w(z)`, `|z| <= k z_R`. Bound
    /// states alone do not normalize: the axial tail of the beam decays
    /// only as `1/z`.
    pub domain_factor: f64,
}

impl SampleSpec {
    pub fn new(n_atoms: usize, temperature: f64, seed: u64) -> Self {
        SampleSpec {
            n_atoms,
            temperature,
            seed,
            burn_in: 10_000,
            thinning: 10,
            proposal_scale_pos: None,
            proposal_scale_vel: None,
            domain_factor: 4.0,
        }
    }

    pub fn validate(&self, trap: &TrapSpec) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::invalid("sampler", "n_atoms must be >= 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("sampler", format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.temperature >= trap.depth_kelvin() {
            return Err(Error::invalid(
                "sampler",
                format!(
                    "temperature {:.3e} K must be below the trap depth {:.3e} K",
                    self.temperature,
                    trap.depth_kelvin()
                ),
            ));
        }
        if self.thinning == 0 {
            return Err(Error::invalid("sampler", "thinning must be >= 1"));
        }
        if !(self.domain_factor.is_finite() && self.domain_factor > 0.0) {
            return Err(Error::invalid("sampler", "domain_factor must be > 0"));
        }
        for (name, v) in [("proposal_scale_pos", self.proposal_scale_pos), ("proposal_scale_vel", self.proposal_scale_vel)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid("sampler", format!("{name} must be > 0")));
                }
            }
        }
        Ok(())
    }
}

/// Phase-space state of the simulated atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub alive: Vec<bool>,
    /// Simulation clock, s.
    pub time: f64,
    pub seed: u64,
    pub n_initial: usize,
}

impl Ensemble {
    /// Ensemble of live atoms at `t = 0`.
    pub fn from_states(positions: Vec<Vector3<f64>>, velocities: Vec<Vector3<f64>>, seed: u64) -> Self {
        assert_eq!(positions.len(), velocities.len(), "positions and velocities differ in length");
        let n = positions.len();
        Ensemble {
            positions,
            velocities,
            alive: vec![true; n],
            time: 0.0,
            seed,
            n_initial: n,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_alive(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn alive_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.alive.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i)
    }

    /// Mean kinetic energy of live atoms, J. Fixed-order summation.
    pub fn mean_kinetic_energy(&self, mass: f64) -> Option<f64> {
        let n = self.n_alive();
        if n == 0 {
            return None;
        }
        let sum: f64 = self.alive_indices().map(|i| self.velocities[i].norm_squared()).sum();
        Some(0.5 * mass * sum / n as f64)
    }
}

/// Draw a Boltzmann-distributed ensemble restricted to bound states
/// (`E < 0`) of the unmodulated trap, inside the trap region set by
/// `spec.domain_factor`, with a single Metropolis chain in the 6D phase
/// space. Deterministic in `spec.seed`.
pub fn sample_thermal(trap: &TrapSpec, spec: &SampleSpec) -> Result<Ensemble> {
    trap.validate()?;
    spec.validate(trap)?;

    let m = trap.mass();
    let kt = trap.consts.boltzmann_k * spec.temperature;
    let static_trap = ModulationSpec::none(0.0);
    let sigma_v = (kt / m).sqrt();
    let (fr, fz) = trap_frequencies(trap);
    let sigma_rho = sigma_v / (2.0 * PI * fr);
    let step_rho = spec.proposal_scale_pos.unwrap_or(0.3 * sigma_rho);
    let step_z = step_rho * fr / fz;
    let step_v = spec.proposal_scale_vel.unwrap_or(0.3 * sigma_v);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pos = Vector3::zeros();
    let mut vel = Vector3::zeros();
    let mut u = potential(trap, &pos, 0.0, &static_trap);
    let mut energy = u;

    let total_steps = spec.burn_in + spec.n_atoms * spec.thinning;
    let mut positions = Vec::with_capacity(spec.n_atoms);
    let mut velocities = Vec::with_capacity(spec.n_atoms);
    let mut accepted_after_burn_in = 0usize;

    for it in 0..total_steps {
        let mut gauss = || rng.sample::<f64, _>(StandardNormal);
        let trial_pos = pos + Vector3::new(step_rho * gauss(), step_rho * gauss(), step_z * gauss());
        let trial_vel = vel + Vector3::new(step_v * gauss(), step_v * gauss(), step_v * gauss());
        let trial_u = potential(trap, &trial_pos, 0.0, &static_trap);
        let trial_e = 0.5 * m * trial_vel.norm_squared() + trial_u;

        let accept = trial_e < 0.0 && !outside_trap(trap, &trial_pos, spec.domain_factor) && {
            let log_ratio = -(trial_e - energy) / kt;
            log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
        };
        if accept {
            pos = trial_pos;
            vel = trial_vel;
            u = trial_u;
            energy = trial_e;
            if it >= spec.burn_in {
                accepted_after_burn_in += 1;
            }
        }
        if it >= spec.burn_in && (it - spec.burn_in + 1).is_multiple_of(spec.thinning) {
            positions.push(pos);
            velocities.push(vel);
        }
    }
    debug_assert!(u < 0.0);

    let rate = accepted_after_burn_in as f64 / (spec.n_atoms * spec.thinning) as f64;
    if !(0.05..=0.95).contains(&rate) {
        return Err(Error::Acceptance { rate });
    }
    Ok(Ensemble::from_states(positions, velocities, spec.seed))
}

/// Kinetic temperature `k_B T = (2/3) <KE>` of the live atoms.
pub fn measure_temperature(ens: &Ensemble, trap: &TrapSpec) -> Result<f64> {
    if ens.n_alive() < 2 {
        return Err(Error::invalid("sampler", "temperature needs at least 2 live atoms"));
    }
    let ke = ens.mean_kinetic_energy(trap.mass()).unwrap_or(0.0);
    Ok(2.0 * ke / (3.0 * trap.consts.boltzmann_k))
}

/// Harmonic-approximation peak density `N w_r^2 w_z (m / (2 pi k_B T))^{3/2}`
/// in simulation particles per m^3.
pub fn peak_density(ens: &Ensemble, trap: &TrapSpec) -> Result<f64> {
    let t = measure_temperature(ens, trap)?;
    if t <= 0.0 {
        return Err(Error::invalid("sampler", "peak density undefined at zero temperature"));
    }
    Ok(harmonic_peak_density(ens.n_alive() as f64, t, trap))
}

pub fn harmonic_peak_density(n: f64, temperature: f64, trap: &TrapSpec) -> f64 {
    let (fr, fz) = trap_frequencies(trap);
    let (wr, wz) = (2.0 * PI * fr, 2.0 * PI * fz);
    let m = trap.mass();
    n * wr * wr * wz * (m / (2.0 * PI * trap.consts.boltzmann_k * temperature)).powf(1.5)
}
