//! Velocity-Verlet propagation under the modulated trap, trap loss and
//! diagnostics.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collisions::{collide, CollisionSpec};
use crate::error::{Error, Result};
use crate::physics::{force, optical_force, total_energy, trap_frequencies, ModulationSpec, TrapSpec};

/// Atoms per rayon task in the force loop.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSpec {
    /// Time step, s.
    pub dt: f64,
    /// Spatial loss boundary in units of the local beam radius / Rayleigh range.
    pub loss_radius_factor: f64,
    /// Steps between diagnostics rows.
    pub diag_interval: usize,
}

impl IntegrationSpec {
    /// Default step for a given drive: 64 steps per period of the fastest of
    /// the radial motion and the drive, rounded so that one modulation period
    /// is an integer number of steps.
    pub fn default_dt(trap: &TrapSpec, modulation: &ModulationSpec) -> f64 {
        let (fr, _) = trap_frequencies(trap);
        let f = modulation.freq_f;
        if modulation.depth_h == 0.0 || f <= 0.0 {
            return 1.0 / (64.0 * fr);
        }
        let steps_per_period = (64.0 * fr.max(f) / f).ceil();
        1.0 / (f * steps_per_period)
    }

    pub fn for_modulation(trap: &TrapSpec, modulation: &ModulationSpec) -> Self {
        IntegrationSpec {
            dt: Self::default_dt(trap, modulation),
            loss_radius_factor: 4.0,
            diag_interval: 1000,
        }
    }

    pub fn validate(&self, trap: &TrapSpec, modulation: &ModulationSpec) -> Result<()> {
        let (fr, _) = trap_frequencies(trap);
        let f_max = if modulation.depth_h == 0.0 { fr } else { fr.max(modulation.freq_f) };
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dynamics", format!("dt must be > 0, got {}", self.dt)));
        }
        if self.dt > 1.0 / (50.0 * f_max) * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "dynamics",
                format!("dt = {:e} s exceeds 1/(50 * {f_max} Hz)", self.dt),
            ));
        }
        if !(self.loss_radius_factor >= 2.0) {
            return Err(Error::invalid("dynamics", "loss_radius_factor must be >= 2"));
        }
        if self.diag_interval == 0 {
            return Err(Error::invalid("dynamics", "diag_interval must be >= 1"));
        }
        Ok(())
    }

    /// Number of steps covering `duration`.
    pub fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub times: Vec<f64>,
    pub n_alive: Vec<usize>,
    /// Mean total energy of live atoms, J.
    pub mean_energy: Vec<f64>,
    /// Kinetic temperature of live atoms, K.
    pub temperature: Vec<f64>,
}

impl DiagnosticsSeries {
    fn record(&mut self, ens: &crate::sampler::Ensemble, trap: &TrapSpec, modulation: &ModulationSpec) {
        let n = ens.n_alive();
        let (mut e_sum, mut v2_sum) = (0.0, 0.0);
        for i in ens.alive_indices() {
            e_sum += total_energy(trap, &ens.positions[i], &ens.velocities[i], ens.time, modulation);
            v2_sum += ens.velocities[i].norm_squared();
        }
        let (mean_e, temp) = if n > 0 {
            let nf = n as f64;
            (e_sum / nf, trap.mass() * v2_sum / (3.0 * nf * trap.consts.boltzmann_k))
        } else {
            (0.0, 0.0)
        };
        self.times.push(ens.time);
        self.n_alive.push(n);
        self.mean_energy.push(mean_e);
        self.temperature.push(temp);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One velocity-Verlet step of all live atoms. Forces are evaluated at the
/// current time and at `t + dt`. Loss is not applied here.
pub fn step(
    ens: &mut crate::sampler::Ensemble,
    trap: &TrapSpec,
    modulation: &ModulationSpec,
    dt: f64,
) -> Result<()> {
    let t0 = ens.time;
    let inv_m = 1.0 / trap.mass();
    for i in 0..ens.len() {
        if !ens.alive[i] {
            continue;
        }
        let a0 = force(trap, &ens.positions[i], t0, modulation) * inv_m;
        let v_half = ens.velocities[i] + a0 * (0.5 * dt);
        let x1 = ens.positions[i] + v_half * dt;
        let a1 = force(trap, &x1, t0 + dt, modulation) * inv_m;
        let v1 = v_half + a1 * (0.5 * dt);
        if !(finite(&x1) && finite(&v1)) {
            return Err(Error::NonFinite { atom: i, time: t0 + dt });
        }
        ens.positions[i] = x1;
        ens.velocities[i] = v1;
    }
    ens.time = t0 + dt;
    Ok(())
}

#[inline]
fn finite(v: &Vector3<f64>) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

/// Spatial exit test: outside `factor * w(z)` radially or `factor * z_R` axially.
#[inline]
pub(crate) fn outside_trap(trap: &TrapSpec, pos: &Vector3<f64>, factor: f64) -> bool {
    let g = &trap.geometry;
    let zmax = factor * g.z_r;
    if pos.z.abs() > zmax {
        return true;
    }
    let q = pos.z / g.z_r;
    let rho2 = pos.x * pos.x + pos.y * pos.y;
    rho2 > factor * factor * g.w0 * g.w0 * (1.0 + q * q)
}

/// Mark atoms lost that have positive total energy and have left the trap
/// region. Returns the number of atoms removed.
pub fn apply_loss(
    ens: &mut crate::sampler::Ensemble,
    trap: &TrapSpec,
    modulation: &ModulationSpec,
    loss_radius_factor: f64,
) -> usize {
    let mut removed = 0;
    for i in 0..ens.len() {
        if ens.alive[i]
            && outside_trap(trap, &ens.positions[i], loss_radius_factor)
            && total_energy(trap, &ens.positions[i], &ens.velocities[i], ens.time, modulation) > 0.0
        {
            ens.alive[i] = false;
            removed += 1;
        }
    }
    removed
}

/// Propagate for the modulation duration `modulation.duration_t`, applying
/// loss after every step and collisions when enabled.
pub fn evolve(
    ens: &mut crate::sampler::Ensemble,
    trap: &TrapSpec,
    modulation: &ModulationSpec,
    ispec: &IntegrationSpec,
    collisions: Option<&CollisionSpec>,
) -> Result<DiagnosticsSeries> {
    let n = ispec.steps_for(modulation.duration_t);
    evolve_with_checkpoints(ens, trap, modulation, ispec, collisions, n, &[], |_, _| Ok(()))
}

/// Propagate `n_steps` steps, calling `at_checkpoint(k, ens)` after step
/// `checkpoints[k]` (step counts, strictly increasing; 0 means the initial
/// state). The clock is `t_start + k * dt`, so a long run passes through
/// exactly the states of the shorter runs it contains.
#[allow(clippy::too_many_arguments)]
pub fn evolve_with_checkpoints<F>(
    ens: &mut crate::sampler::Ensemble,
    trap: &TrapSpec,
    modulation: &ModulationSpec,
    ispec: &IntegrationSpec,
    collisions: Option<&CollisionSpec>,
    n_steps: usize,
    checkpoints: &[usize],
    mut at_checkpoint: F,
) -> Result<DiagnosticsSeries>
where
    F: FnMut(usize, &crate::sampler::Ensemble) -> Result<()>,
{
    trap.validate()?;
    modulation.validate()?;
    ispec.validate(trap, modulation)?;
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.last().is_some_and(|&c| c > n_steps) {
        return Err(Error::invalid("dynamics", "checkpoints must be increasing and within the run"));
    }
    let collisions = collisions.filter(|c| c.enabled);

    let dt = ispec.dt;
    let t_start = ens.time;
    let inv_m = 1.0 / trap.mass();
    let geometry = trap.geometry;
    let gravity = if trap.gravity_enabled {
        Vector3::new(-trap.consts.gravity_g, 0.0, 0.0)
    } else {
        Vector3::zeros()
    };
    let accel = move |x: &Vector3<f64>, u0: f64| optical_force(u0, &geometry, x) * inv_m + gravity;

    let mut diag = DiagnosticsSeries::default();
    diag.record(ens, trap, modulation);
    let mut next_cp = 0;
    if checkpoints.first() == Some(&0) {
        at_checkpoint(0, ens)?;
        next_cp = 1;
    }

    let u0_at = |t: f64| trap.depth_u0 * modulation.depth_factor(t);
    let mut acc: Vec<Vector3<f64>> = {
        let u0 = u0_at(t_start);
        ens.positions.iter().map(|x| accel(x, u0)).collect()
    };

    for k in 0..n_steps {
        let t1 = t_start + (k + 1) as f64 * dt;
        let u1 = u0_at(t1);
        let half = 0.5 * dt;
        let bad = ens
            .positions
            .par_chunks_mut(CHUNK)
            .zip(ens.velocities.par_chunks_mut(CHUNK))
            .zip(acc.par_chunks_mut(CHUNK))
            .zip(ens.alive.par_chunks(CHUNK))
            .enumerate()
            .map(|(c, (((xs, vs), accs), alive))| {
                let mut bad = None;
                for j in 0..xs.len() {
                    if !alive[j] {
                        continue;
                    }
                    let v_half = vs[j] + accs[j] * half;
                    let x1 = xs[j] + v_half * dt;
                    let a1 = accel(&x1, u1);
                    let v1 = v_half + a1 * half;
                    if bad.is_none() && !(finite(&x1) && finite(&v1)) {
                        bad = Some(c * CHUNK + j);
                    }
                    xs[j] = x1;
                    vs[j] = v1;
                    accs[j] = a1;
                }
                bad
            })
            .reduce(|| None, |a, b| match (a, b) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            });
        if let Some(atom) = bad {
            return Err(Error::NonFinite { atom, time: t1 });
        }
        ens.time = t1;
        apply_loss(ens, trap, modulation, ispec.loss_radius_factor);
        if let Some(c) = collisions {
            collide(ens, c, dt, k as u64)?;
        }
        let done = k + 1;
        if done % ispec.diag_interval == 0 && done != n_steps {
            diag.record(ens, trap, modulation);
        }
        while next_cp < checkpoints.len() && checkpoints[next_cp] == done {
            at_checkpoint(next_cp, ens)?;
            next_cp += 1;
        }
    }
    if n_steps > 0 {
        diag.record(ens, trap, modulation);
    }
    Ok(diag)
}

/// Secular energy drift of a series: slope of the least-squares line through
/// `energies` times the series length, relative to `|E_0|`. Bounded
/// integration error oscillates and averages out; a non-symplectic scheme
/// shows up as a trend.
pub fn relative_energy_drift(energies: &[f64]) -> f64 {
    let n = energies.len();
    if n < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let fit = crate::stats::linear_fit(&xs, energies).expect("at least two points");
    (fit.slope * (n - 1) as f64 / energies[0]).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{potential, BeamGeometry};
    use crate::sampler::{sample_thermal, Ensemble, SampleSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn trap() -> TrapSpec {
        TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).unwrap()).unwrap()
    }

    fn single(pos: Vector3<f64>, vel: Vector3<f64>) -> Ensemble {
        Ensemble::from_states(vec![pos], vec![vel], 0)
    }

    #[test]
    fn default_dt_respects_bound_and_period() {
        let trap = trap();
        for f in [100.0, 1250.0, 2500.0, 3333.0, 7000.0] {
            let m = ModulationSpec::new(0.1, f, 0.01).unwrap();
            let spec = IntegrationSpec::for_modulation(&trap, &m);
            spec.validate(&trap, &m).unwrap();
            let steps = 1.0 / (f * spec.dt);
            assert!((steps - steps.round()).abs() < 1e-9, "f={f} steps={steps}");
            assert!(spec.dt <= 1.0 / (64.0 * f.max(1250.0)) * (1.0 + 1e-12));
        }
        let m = ModulationSpec::none(0.1);
        assert_relative_eq!(IntegrationSpec::default_dt(&trap, &m), 1.0 / (64.0 * 1250.0));
        let coarse = IntegrationSpec { dt: 1.0 / (40.0 * 1250.0), ..IntegrationSpec::for_modulation(&trap, &m) };
        assert!(coarse.validate(&trap, &m).is_err());
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let trap = trap();
        let m = ModulationSpec::none(1.0);
        let mut ens = single(Vector3::zeros(), Vector3::zeros());
        for _ in 0..100 {
            step(&mut ens, &trap, &m, 1e-5).unwrap();
        }
        assert_eq!(ens.positions[0], Vector3::zeros());
        assert_eq!(ens.velocities[0], Vector3::zeros());
        assert_relative_eq!(ens.time, 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn small_oscillation_matches_harmonic_solution() {
        // 10 nm amplitude keeps the anharmonic frequency shift below 1e-7
        let trap = trap();
        let m = ModulationSpec::none(1.0);
        let omega = trap.omega_radial();
        let period = 2.0 * PI / omega;
        let steps_per_period = 4000;
        let dt = period / steps_per_period as f64;
        let a = 10e-9;
        let mut ens = single(Vector3::new(a, 0.0, 0.0), Vector3::zeros());
        let mut worst: f64 = 0.0;
        for k in 1..=(100 * steps_per_period) {
            step(&mut ens, &trap, &m, dt).unwrap();
            if k % 97 == 0 {
                let expected = a * (omega * k as f64 * dt).cos();
                worst = worst.max((ens.positions[0].x - expected).abs() / a);
            }
        }
        assert!(worst < 1e-4, "max relative deviation {worst:e}");
    }

    #[test]
    fn energy_has_no_secular_drift() {
        let trap = trap();
        let m = ModulationSpec::none(1.0);
        let dt = IntegrationSpec::default_dt(&trap, &m);
        let mut ens = single(Vector3::new(1e-6, 0.5e-6, 20e-6), Vector3::new(0.0, 1e-3, 0.0));
        let mut energies = Vec::with_capacity(100_001);
        let e = |ens: &Ensemble| total_energy(&trap, &ens.positions[0], &ens.velocities[0], ens.time, &m);
        energies.push(e(&ens));
        for _ in 0..100_000 {
            step(&mut ens, &trap, &m, dt).unwrap();
            energies.push(e(&ens));
        }
        let drift = relative_energy_drift(&energies);
        assert!(drift < 1e-8, "drift {drift:e}");
        let worst = energies.iter().map(|x| ((x - energies[0]) / energies[0]).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "bounded oscillation {worst:e}");
    }

    #[test]
    fn evolve_matches_repeated_steps() {
        let trap = trap();
        let m = ModulationSpec::new(0.15, 2500.0, 2e-3).unwrap();
        let ispec = IntegrationSpec::for_modulation(&trap, &m);
        let start = sample_thermal(&trap, &SampleSpec::new(50, 30e-6, 3)).unwrap();
        let mut a = start.clone();
        evolve(&mut a, &trap, &m, &ispec, None).unwrap();
        let mut b = start;
        for _ in 0..ispec.steps_for(m.duration_t) {
            step(&mut b, &trap, &m, ispec.dt).unwrap();
            apply_loss(&mut b, &trap, &m, ispec.loss_radius_factor);
        }
        for i in 0..a.len() {
            assert!((a.positions[i] - b.positions[i]).norm() < 1e-15);
            assert!((a.velocities[i] - b.velocities[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_duration_is_identity() {
        let trap = trap();
        let m = ModulationSpec::new(0.15, 2500.0, 0.0).unwrap();
        let ispec = IntegrationSpec::for_modulation(&trap, &m);
        let start = sample_thermal(&trap, &SampleSpec::new(20, 30e-6, 3)).unwrap();
        let mut ens = start.clone();
        let diag = evolve(&mut ens, &trap, &m, &ispec, None).unwrap();
        assert_eq!(ens, start);
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn cold_cloud_suffers_no_loss() {
        let trap = trap();
        let m = ModulationSpec::none(10_000.0 * IntegrationSpec::default_dt(&trap, &ModulationSpec::none(0.0)));
        let ispec = IntegrationSpec { diag_interval: 500, ..IntegrationSpec::for_modulation(&trap, &m) };
        let mut ens = sample_thermal(&trap, &SampleSpec::new(200, 30e-6, 5)).unwrap();
        let diag = evolve(&mut ens, &trap, &m, &ispec, None).unwrap();
        assert_eq!(ens.n_alive(), 200);
        assert!(diag.n_alive.iter().all(|&n| n == 200));
        assert!(diag.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn loss_needs_energy_and_exit() {
        let trap = trap();
        let m = ModulationSpec::none(0.0);
        let w0 = trap.geometry.w0;
        let v_escape = (2.0 * trap.depth_u0 / trap.mass()).sqrt();
        // far out, moving outward fast: lost
        let mut ens = single(Vector3::new(10.0 * w0, 0.0, 0.0), Vector3::new(1.5 * v_escape, 0.0, 0.0));
        assert_eq!(apply_loss(&mut ens, &trap, &m, 4.0), 1);
        assert!(!ens.alive[0]);
        // energetic but still inside 4 w(z): kept
        let mut ens = single(Vector3::new(w0, 0.0, 0.0), Vector3::new(1.5 * v_escape, 0.0, 0.0));
        assert_eq!(apply_loss(&mut ens, &trap, &m, 4.0), 0);
        // outside but bound: kept
        let p = Vector3::new(4.5 * w0, 0.0, 0.0);
        assert!(potential(&trap, &p, 0.0, &m) < 0.0);
        let mut ens = single(p, Vector3::zeros());
        assert_eq!(apply_loss(&mut ens, &trap, &m, 4.0), 0);
        // axial exit
        let mut ens = single(Vector3::new(0.0, 0.0, 5.0 * trap.geometry.z_r), Vector3::new(0.0, 0.0, v_escape));
        assert_eq!(apply_loss(&mut ens, &trap, &m, 4.0), 1);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let trap = trap();
        let m = ModulationSpec::none(1e-4);
        let ispec = IntegrationSpec::for_modulation(&trap, &m);
        let mut ens = Ensemble::from_states(
            vec![Vector3::zeros(), Vector3::new(f64::NAN, 0.0, 0.0)],
            vec![Vector3::zeros(); 2],
            0,
        );
        match evolve(&mut ens, &trap, &m, &ispec, None) {
            Err(Error::NonFinite { atom, .. }) => assert_eq!(atom, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        let mut ens = single(Vector3::new(0.0, f64::INFINITY, 0.0), Vector3::zeros());
        assert!(matches!(step(&mut ens, &trap, &m, 1e-5), Err(Error::NonFinite { atom: 0, .. })));
    }

    #[test]
    fn checkpoints_reproduce_shorter_runs() {
        let trap = trap();
        let long = ModulationSpec::new(0.2, 2500.0, 0.0).unwrap();
        let ispec = IntegrationSpec::for_modulation(&trap, &long);
        let start = sample_thermal(&trap, &SampleSpec::new(30, 60e-6, 9)).unwrap();
        let cps = [0usize, 40, 250];
        let total = 400;
        let mut snaps = Vec::new();
        let mut ens = start.clone();
        let long = ModulationSpec { duration_t: total as f64 * ispec.dt, ..long };
        evolve_with_checkpoints(&mut ens, &trap, &long, &ispec, None, total, &cps, |_, e| {
            snaps.push(e.clone());
            Ok(())
        })
        .unwrap();
        for (k, &n) in cps.iter().enumerate() {
            let short = ModulationSpec { duration_t: n as f64 * ispec.dt, ..long };
            let mut e = start.clone();
            evolve(&mut e, &trap, &short, &ispec, None).unwrap();
            assert_eq!(e, snaps[k], "checkpoint {n}");
        }
    }
}
