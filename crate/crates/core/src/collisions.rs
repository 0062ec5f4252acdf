//! Direct-simulation Monte Carlo elastic collisions (hard spheres,
//! no-time-counter pair selection).
//!
//! Each simulated atom stands for `macro_weight` physical atoms, so pair
//! selection uses the physical density while the simulated particle count
//! stays at desk scale.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::TrapSpec;
use crate::sampler::{measure_temperature, peak_density, Ensemble};

/// s-wave triplet scattering length of 87Rb, m.
pub const RB87_SCATTERING_LENGTH: f64 = 5.29e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionSpec {
    pub enabled: bool,
    /// m.
    pub scattering_length: f64,
    /// Cell edge along x and y, m.
    pub cell_size: f64,
    /// Cell edge along the beam axis, m.
    pub cell_size_axial: f64,
    /// Physical atoms per simulated particle.
    pub macro_weight: f64,
    pub seed: u64,
    /// Half-widths of the cell grid (radial, axial), m. Doubled once when
    /// more than 1% of the live atoms fall outside.
    pub grid_half_extent: (f64, f64),
    pub mass: f64,
}

impl CollisionSpec {
    /// Cells of `w0/4` radially and `z_R/10` axially; the grid covers the
    /// region inside which atoms are not yet counted as lost.
    pub fn for_trap(trap: &TrapSpec, macro_weight: f64, seed: u64) -> Self {
        let g = trap.geometry;
        CollisionSpec {
            enabled: true,
            scattering_length: RB87_SCATTERING_LENGTH,
            cell_size: g.w0 / 4.0,
            cell_size_axial: g.z_r / 10.0,
            macro_weight,
            seed,
            grid_half_extent: (20.0 * g.w0, 5.0 * g.z_r),
            mass: trap.mass(),
        }
    }

    pub fn disabled(trap: &TrapSpec) -> Self {
        CollisionSpec {
            enabled: false,
            ..CollisionSpec::for_trap(trap, 1.0, 0)
        }
    }

    pub fn cross_section(&self) -> f64 {
        8.0 * PI * self.scattering_length * self.scattering_length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.scattering_length) {
            return Err(Error::invalid("collisions", "scattering_length must be > 0"));
        }
        if !(positive(self.cell_size) && positive(self.cell_size_axial)) {
            return Err(Error::invalid("collisions", "cell_size must be > 0"));
        }
        if !(self.macro_weight.is_finite() && self.macro_weight >= 1.0) {
            return Err(Error::invalid("collisions", format!("macro_weight must be >= 1, got {}", self.macro_weight)));
        }
        if !(positive(self.grid_half_extent.0) && positive(self.grid_half_extent.1)) {
            return Err(Error::invalid("collisions", "grid extent must be > 0"));
        }
        if !positive(self.mass) {
            return Err(Error::invalid("collisions", "mass must be > 0"));
        }
        Ok(())
    }
}

/// Mean relative speed of a thermal gas, `4 sqrt(k_B T / (pi m))`.
pub fn mean_relative_speed(temperature: f64, mass: f64, boltzmann_k: f64) -> f64 {
    4.0 * (boltzmann_k * temperature / (PI * mass)).sqrt()
}

/// `n sigma <v_rel>` for hard spheres with `sigma = 8 pi a^2`.
pub fn collision_rate(density: f64, temperature: f64, scattering_length: f64, mass: f64, boltzmann_k: f64) -> f64 {
    let sigma = 8.0 * PI * scattering_length * scattering_length;
    density * sigma * mean_relative_speed(temperature, mass, boltzmann_k)
}

/// Peak collision rate of an ensemble, using the physical density
/// (`macro_weight` times the simulated harmonic peak density).
pub fn collision_rate_estimate(ens: &Ensemble, trap: &TrapSpec, cspec: &CollisionSpec) -> Result<f64> {
    let n = peak_density(ens, trap)? * cspec.macro_weight;
    let t = measure_temperature(ens, trap)?;
    Ok(collision_rate(n, t, cspec.scattering_length, trap.mass(), trap.consts.boltzmann_k))
}

struct Grid {
    half: (f64, f64),
    cells: (i64, i64, i64),
}

impl Grid {
    fn new(spec: &CollisionSpec, scale: f64) -> Self {
        let half = (spec.grid_half_extent.0 * scale, spec.grid_half_extent.1 * scale);
        let nr = (2.0 * half.0 / spec.cell_size).ceil() as i64;
        let nz = (2.0 * half.1 / spec.cell_size_axial).ceil() as i64;
        Grid {
            half,
            cells: (nr, nr, nz),
        }
    }

    fn key(&self, spec: &CollisionSpec, p: &Vector3<f64>) -> Option<u64> {
        let ix = ((p.x + self.half.0) / spec.cell_size).floor() as i64;
        let iy = ((p.y + self.half.0) / spec.cell_size).floor() as i64;
        let iz = ((p.z + self.half.1) / spec.cell_size_axial).floor() as i64;
        let (nx, ny, nz) = self.cells;
        if (0..nx).contains(&ix) && (0..ny).contains(&iy) && (0..nz).contains(&iz) {
            Some(((iz * ny + iy) * nx + ix) as u64)
        } else {
            None
        }
    }
}

/// Bound atoms on near-zero-energy orbits can drift arbitrarily far along
/// the weak axial tail of the well. Up to this fraction of the live atoms may
/// sit outside the grid; they have no collision partners there.
const MAX_OUTSIDE_FRACTION: f64 = 0.01;

fn bin_atoms(ens: &Ensemble, spec: &CollisionSpec) -> Result<(Vec<(u64, usize)>, f64)> {
    let allowed = (MAX_OUTSIDE_FRACTION * ens.n_alive() as f64).floor() as usize;
    let mut first_outside = 0;
    for scale in [1.0, 2.0] {
        let grid = Grid::new(spec, scale);
        let mut keys = Vec::with_capacity(ens.len());
        let mut outside = 0;
        for i in ens.alive_indices() {
            match grid.key(spec, &ens.positions[i]) {
                Some(k) => keys.push((k, i)),
                None => {
                    if outside == 0 {
                        first_outside = i;
                    }
                    outside += 1;
                }
            }
        }
        if outside <= allowed {
            keys.sort_unstable();
            return Ok((keys, scale));
        }
        log::debug!("{outside} atoms outside the collision grid at scale {scale}");
    }
    Err(Error::GridOverflow { atom: first_outside })
}

/// splitmix64 finalizer; decorrelates per-cell stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cell_rng(seed: u64, cell: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(cell)) ^ step))
}

/// Uniformly distributed unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let cos_t: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// Isotropic elastic scattering in the centre-of-mass frame for equal masses.
pub fn scatter_pair(v1: &Vector3<f64>, v2: &Vector3<f64>, direction: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let cm = 0.5 * (v1 + v2);
    let half_g = 0.5 * (v1 - v2).norm();
    (cm + direction * half_g, cm - direction * half_g)
}

/// Collision statistics of one call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CollisionStats {
    pub candidates: usize,
    pub collisions: usize,
}

/// One DSMC collision step of length `dt`. Cells are rebuilt on every call;
/// the random stream of each cell is a function of `(seed, cell, step_index)`
/// only.
pub fn collide(ens: &mut Ensemble, cspec: &CollisionSpec, dt: f64, step_index: u64) -> Result<CollisionStats> {
    if !cspec.enabled {
        return Ok(CollisionStats::default());
    }
    cspec.validate()?;
    let (keys, _) = bin_atoms(ens, cspec)?;
    let volume = cspec.cell_size * cspec.cell_size * cspec.cell_size_axial;
    let sigma = cspec.cross_section();
    let mut stats = CollisionStats::default();

    let mut start = 0;
    let mut members: Vec<usize> = Vec::new();
    while start < keys.len() {
        let cell = keys[start].0;
        let mut end = start;
        while end < keys.len() && keys[end].0 == cell {
            end += 1;
        }
        let n = end - start;
        if n >= 2 {
            members.clear();
            members.extend(keys[start..end].iter().map(|&(_, i)| i));
            stats = add(stats, collide_cell(ens, &members, cspec, sigma, volume, dt, cell, step_index));
        }
        start = end;
    }
    Ok(stats)
}

fn add(a: CollisionStats, b: CollisionStats) -> CollisionStats {
    CollisionStats {
        candidates: a.candidates + b.candidates,
        collisions: a.collisions + b.collisions,
    }
}

#[allow(clippy::too_many_arguments)]
fn collide_cell(
    ens: &mut Ensemble,
    members: &[usize],
    cspec: &CollisionSpec,
    sigma: f64,
    volume: f64,
    dt: f64,
    cell: u64,
    step_index: u64,
) -> CollisionStats {
    let n = members.len();
    let mut centre = Vector3::zeros();
    for &i in members {
        centre += ens.velocities[i];
    }
    centre /= n as f64;
    // |v_i - v_j| <= 2 max |v - centre| bounds every pair in the cell
    let vr_max = 2.0 * members.iter().map(|&i| (ens.velocities[i] - centre).norm()).fold(0.0, f64::max);
    if vr_max == 0.0 {
        return CollisionStats::default();
    }
    let mut rng = cell_rng(cspec.seed, cell, step_index);
    let expected = 0.5 * (n * (n - 1)) as f64 * cspec.macro_weight * sigma * vr_max * dt / volume;
    let mut candidates = expected.floor() as usize;
    if rng.random::<f64>() < expected - expected.floor() {
        candidates += 1;
    }
    let mut collisions = 0;
    for _ in 0..candidates {
        let a = members[rng.random_range(0..n)];
        let mut b = members[rng.random_range(0..n - 1)];
        if b == a {
            b = members[n - 1];
        }
        let (va, vb) = (ens.velocities[a], ens.velocities[b]);
        let g = (va - vb).norm();
        if rng.random::<f64>() * vr_max < g {
            let dir = random_unit_vector(&mut rng);
            let (na, nb) = scatter_pair(&va, &vb, &dir);
            ens.velocities[a] = na;
            ens.velocities[b] = nb;
            collisions += 1;
        }
    }
    CollisionStats { candidates, collisions }
}
