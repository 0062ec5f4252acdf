//! Gaussian-beam dipole trap: constants, geometry, potential and force.
//!
//! Coordinates: `x` is radial and vertical (gravity acts along `-x`), `y` is
//! radial along the imaging line of sight, `z` is the beam axis.
//!
//! The trap depth is modulated as `U0(t) = U0 * (1 + h * sin(2 pi f t + phi0))`
//! while `t <= T`; afterwards the trap is static.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass of a 87Rb atom in kg.
pub const RB87_MASS: f64 = 1.44316e-25;
/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Standard gravity in m/s^2.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConsts {
    pub atom_mass: f64,
    pub boltzmann_k: f64,
    pub gravity_g: f64,
}

impl Default for PhysConsts {
    fn default() -> Self {
        PhysConsts {
            atom_mass: RB87_MASS,
            boltzmann_k: BOLTZMANN,
            gravity_g: GRAVITY,
        }
    }
}

impl PhysConsts {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("atom_mass", self.atom_mass),
            ("boltzmann_k", self.boltzmann_k),
            ("gravity_g", self.gravity_g),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("physics", format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Focused-beam geometry. The Rayleigh range is an independent input, not
/// derived from the waist and a wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGeometry {
    /// 1/e^2 intensity radius at the focus, m.
    pub w0: f64,
    /// Rayleigh range, m.
    pub z_r: f64,
}

impl BeamGeometry {
    pub fn new(w0: f64, z_r: f64) -> Result<Self> {
        let g = BeamGeometry { w0, z_r };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w0.is_finite() && self.w0 > 0.0) {
            return Err(Error::invalid("physics", format!("beam waist must be positive, got {}", self.w0)));
        }
        if !(self.z_r.is_finite() && self.z_r > 0.0) {
            return Err(Error::invalid("physics", format!("Rayleigh range must be positive, got {}", self.z_r)));
        }
        Ok(())
    }

    /// Beam radius `w(z) = w0 * sqrt(1 + (z/z_R)^2)`.
    #[inline]
    pub fn radius_at(&self, z: f64) -> f64 {
        let q = z / self.z_r;
        self.w0 * (1.0 + q * q).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    /// Magnitude of the potential minimum, J.
    pub depth_u0: f64,
    pub geometry: BeamGeometry,
    pub gravity_enabled: bool,
    pub consts: PhysConsts,
}

impl TrapSpec {
    pub fn new(depth_u0: f64, geometry: BeamGeometry) -> Result<Self> {
        let t = TrapSpec {
            depth_u0,
            geometry,
            gravity_enabled: false,
            consts: PhysConsts::default(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Trap specified by its measured radial frequency instead of its depth.
    pub fn from_radial_frequency(f_radial: f64, geometry: BeamGeometry) -> Result<Self> {
        if !(f_radial.is_finite() && f_radial > 0.0) {
            return Err(Error::invalid("physics", format!("radial frequency must be positive, got {f_radial}")));
        }
        geometry.validate()?;
        let u0 = u0_from_radial_frequency(f_radial, geometry.w0, RB87_MASS);
        TrapSpec::new(u0, geometry)
    }

    pub fn with_gravity(mut self, enabled: bool) -> Self {
        self.gravity_enabled = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.consts.validate()?;
        self.geometry.validate()?;
        if !(self.depth_u0.is_finite() && self.depth_u0 > 0.0) {
            return Err(Error::invalid("physics", format!("trap depth must be positive, got {}", self.depth_u0)));
        }
        let (fr, fz) = trap_frequencies(self);
        if !(fr.is_finite() && fr > 0.0 && fz.is_finite() && fz > 0.0) {
            return Err(Error::invalid("physics", "derived trap frequencies are not finite and positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn mass(&self) -> f64 {
        self.consts.atom_mass
    }

    /// Trap depth expressed as a temperature, K.
    pub fn depth_kelvin(&self) -> f64 {
        self.depth_u0 / self.consts.boltzmann_k
    }

    /// Radial angular frequency of the unmodulated harmonic expansion, rad/s.
    pub fn omega_radial(&self) -> f64 {
        2.0 * PI * trap_frequencies(self).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpec {
    /// Fractional modulation amplitude, in `[0, 1)`.
    pub depth_h: f64,
    /// Modulation frequency, Hz.
    pub freq_f: f64,
    /// Modulation duration, s.
    pub duration_t: f64,
    /// Phase at `t = 0`, rad.
    pub phase0: f64,
}

impl ModulationSpec {
    pub fn new(depth_h: f64, freq_f: f64, duration_t: f64) -> Result<Self> {
        let m = ModulationSpec {
            depth_h,
            freq_f,
            duration_t,
            phase0: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Unmodulated trap held for `duration_t`.
    pub fn none(duration_t: f64) -> Self {
        ModulationSpec {
            depth_h: 0.0,
            freq_f: 0.0,
            duration_t,
            phase0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_h.is_finite() && self.depth_h >= 0.0) {
            return Err(Error::invalid("physics", format!("modulation depth must be >= 0, got {}", self.depth_h)));
        }
        if self.depth_h >= 1.0 {
            return Err(Error::invalid("physics", format!("modulation depth must be < 1, got {}", self.depth_h)));
        }
        if !(self.freq_f.is_finite() && self.freq_f >= 0.0) {
            return Err(Error::invalid("physics", format!("modulation frequency must be >= 0, got {}", self.freq_f)));
        }
        if !(self.duration_t.is_finite() && self.duration_t >= 0.0) {
            return Err(Error::invalid("physics", format!("modulation duration must be >= 0, got {}", self.duration_t)));
        }
        if !self.phase0.is_finite() {
            return Err(Error::invalid("physics", "modulation phase must be finite"));
        }
        Ok(())
    }

    /// Depth scale factor `1 + h sin(2 pi f t + phi0)`, or 1 once `t > T`.
    #[inline]
    pub fn depth_factor(&self, t: f64) -> f64 {
        if self.depth_h == 0.0 || t > self.duration_t {
            1.0
        } else {
            1.0 + self.depth_h * (2.0 * PI * self.freq_f * t + self.phase0).sin()
        }
    }
}

/// Potential energy in J.
pub fn potential(trap: &TrapSpec, pos: &Vector3<f64>, t: f64, modulation: &ModulationSpec) -> f64 {
    let u0 = trap.depth_u0 * modulation.depth_factor(t);
    let u = optical_potential(u0, &trap.geometry, pos);
    if trap.gravity_enabled {
        u + trap.consts.atom_mass * trap.consts.gravity_g * pos.x
    } else {
        u
    }
}

#[inline]
fn optical_potential(u0: f64, g: &BeamGeometry, pos: &Vector3<f64>) -> f64 {
    let q = pos.z / g.z_r;
    let s = 1.0 + q * q;
    let rho2 = pos.x * pos.x + pos.y * pos.y;
    -u0 / s * (-2.0 * rho2 / (g.w0 * g.w0 * s)).exp()
}

/// Force `-grad U` in N.
pub fn force(trap: &TrapSpec, pos: &Vector3<f64>, t: f64, modulation: &ModulationSpec) -> Vector3<f64> {
    let u0 = trap.depth_u0 * modulation.depth_factor(t);
    let mut f = optical_force(u0, &trap.geometry, pos);
    if trap.gravity_enabled {
        f.x -= trap.consts.atom_mass * trap.consts.gravity_g;
    }
    f
}

/// Analytic gradient of the Gaussian-beam potential with instantaneous depth `u0`.
#[inline]
pub(crate) fn optical_force(u0: f64, g: &BeamGeometry, pos: &Vector3<f64>) -> Vector3<f64> {
    let w02 = g.w0 * g.w0;
    let zr2 = g.z_r * g.z_r;
    let s = 1.0 + pos.z * pos.z / zr2;
    let inv_s = 1.0 / s;
    let rho2 = pos.x * pos.x + pos.y * pos.y;
    let u = -u0 * inv_s * (-2.0 * rho2 * inv_s / w02).exp();
    let radial = 4.0 * u * inv_s / w02;
    let axial = -u * (2.0 * rho2 * inv_s * inv_s / w02 - inv_s) * 2.0 * pos.z / zr2;
    Vector3::new(radial * pos.x, radial * pos.y, axial)
}

/// Radial and axial trap frequencies (Hz) of the harmonic expansion about the
/// minimum: `w_r = sqrt(4 U0 / (m w0^2))`, `w_z = sqrt(2 U0 / (m z_R^2))`.
pub fn trap_frequencies(trap: &TrapSpec) -> (f64, f64) {
    let m = trap.consts.atom_mass;
    let g = &trap.geometry;
    let omega_r = (4.0 * trap.depth_u0 / (m * g.w0 * g.w0)).sqrt();
    let omega_z = (2.0 * trap.depth_u0 / (m * g.z_r * g.z_r)).sqrt();
    (omega_r / (2.0 * PI), omega_z / (2.0 * PI))
}

/// Trap depth reproducing a given radial frequency: `U0 = m (2 pi f_r)^2 w0^2 / 4`.
pub fn u0_from_radial_frequency(f_radial: f64, w0: f64, mass: f64) -> f64 {
    let omega = 2.0 * PI * f_radial;
    mass * omega * omega * w0 * w0 / 4.0
}

/// Kinetic plus potential energy of one atom, J.
pub fn total_energy(
    trap: &TrapSpec,
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    t: f64,
    modulation: &ModulationSpec,
) -> f64 {
    0.5 * trap.consts.atom_mass * vel.norm_squared() + potential(trap, pos, t, modulation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_trap() -> TrapSpec {
        TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).unwrap()).unwrap()
    }

    #[test]
    fn potential_landmarks() {
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        let u0 = trap.depth_u0;
        assert_relative_eq!(potential(&trap, &Vector3::zeros(), 0.0, &off), -u0, max_relative = 1e-15);
        let waist = Vector3::new(55e-6, 0.0, 0.0);
        assert_relative_eq!(potential(&trap, &waist, 0.0, &off), -u0 * (-2.0f64).exp(), max_relative = 1e-14);
        let rayleigh = Vector3::new(0.0, 0.0, 750e-6);
        assert_relative_eq!(potential(&trap, &rayleigh, 0.0, &off), -u0 / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn modulation_crest_at_quarter_period() {
        let trap = paper_trap();
        let f = 2500.0;
        let m = ModulationSpec::new(0.15, f, 1.0).unwrap();
        let u = potential(&trap, &Vector3::zeros(), 1.0 / (4.0 * f), &m);
        assert_relative_eq!(u, -1.15 * trap.depth_u0, max_relative = 1e-12);
        // after the drive stops the trap is static
        assert_relative_eq!(potential(&trap, &Vector3::zeros(), 1.0 + 1.0 / (4.0 * f), &m), -trap.depth_u0);
    }

    #[test]
    fn potential_vanishes_far_away() {
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        assert!(potential(&trap, &Vector3::new(1e-2, 0.0, 0.0), 0.0, &off).abs() < 1e-40);
        assert!(potential(&trap, &Vector3::new(0.0, 0.0, 10.0), 0.0, &off).abs() < 1e-32);
    }

    #[test]
    fn force_at_origin() {
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        assert_eq!(force(&trap, &Vector3::zeros(), 0.0, &off), Vector3::zeros());
        let g = trap.with_gravity(true);
        let f = force(&g, &Vector3::zeros(), 0.0, &off);
        assert_relative_eq!(f.x, -RB87_MASS * GRAVITY);
        assert_eq!((f.y, f.z), (0.0, 0.0));
    }

    #[test]
    fn radial_force_is_harmonic_near_axis() {
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        let rho = 1e-8;
        let f = force(&trap, &Vector3::new(rho, 0.0, 0.0), 0.0, &off);
        let w = trap.omega_radial();
        assert_relative_eq!(f.x, -trap.mass() * w * w * rho, max_relative = 1e-6);
    }

    #[test]
    fn quadratic_fit_recovers_radial_frequency() {
        // least-squares fit of U = a + b rho^2 on rho <= 0.02 w0
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        let w0 = trap.geometry.w0;
        let (mut s1, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..=200 {
            let rho = 0.02 * w0 * i as f64 / 200.0;
            let x = rho * rho;
            let y = potential(&trap, &Vector3::new(rho, 0.0, 0.0), 0.0, &off) / trap.depth_u0;
            s1 += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let b = (s1 * sxy - sx * sy) / (s1 * sxx - sx * sx) * trap.depth_u0;
        let omega = (2.0 * b / trap.mass()).sqrt();
        assert_relative_eq!(omega, trap.omega_radial(), max_relative = 1e-3);
    }

    #[test]
    fn frequencies_from_paper_geometry() {
        let trap = paper_trap();
        let (fr, fz) = trap_frequencies(&trap);
        assert_relative_eq!(fr, 1250.0, max_relative = 1e-12);
        assert_relative_eq!(fz / fr, 55.0 / (2f64.sqrt() * 750.0), max_relative = 1e-12);
        assert!((fz - 64.8).abs() < 0.05, "axial {fz}");
        assert!((trap.depth_u0 - 6.733e-27).abs() < 0.001e-27, "U0 {}", trap.depth_u0);
        assert!((trap.depth_kelvin() * 1e6 - 487.6).abs() < 0.1);
    }

    #[test]
    fn frequencies_scale_with_root_depth() {
        let trap = paper_trap();
        let mut deeper = trap;
        deeper.depth_u0 *= 4.0;
        let (a, b) = trap_frequencies(&trap);
        let (c, d) = trap_frequencies(&deeper);
        assert_relative_eq!(c, 2.0 * a, max_relative = 1e-14);
        assert_relative_eq!(d, 2.0 * b, max_relative = 1e-14);
        let u1 = u0_from_radial_frequency(1000.0, 55e-6, RB87_MASS);
        let u2 = u0_from_radial_frequency(2000.0, 55e-6, RB87_MASS);
        assert_relative_eq!(u2, 4.0 * u1, max_relative = 1e-14);
    }

    #[test]
    fn energy_landmarks() {
        let trap = paper_trap();
        let off = ModulationSpec::none(0.0);
        let u0 = trap.depth_u0;
        assert_relative_eq!(total_energy(&trap, &Vector3::zeros(), &Vector3::zeros(), 0.0, &off), -u0);
        let far = Vector3::new(1.0, 1.0, 0.0);
        assert_eq!(total_energy(&trap, &far, &Vector3::zeros(), 0.0, &off), 0.0);
        // along the axis the well decays only as 1/z^2
        let axial = Vector3::new(0.0, 0.0, 1.0);
        let e = total_energy(&trap, &axial, &Vector3::zeros(), 0.0, &off);
        assert_relative_eq!(e, -u0 / (1.0 + (1.0 / 750e-6f64).powi(2)), max_relative = 1e-12);
        let v = (2.0 * u0 / trap.mass()).sqrt();
        let e = total_energy(&trap, &Vector3::zeros(), &Vector3::new(0.0, v, 0.0), 0.0, &off);
        assert!(e.abs() < 1e-15 * u0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(BeamGeometry::new(0.0, 1e-3).is_err());
        assert!(BeamGeometry::new(1e-5, -1.0).is_err());
        let g = BeamGeometry::new(55e-6, 750e-6).unwrap();
        assert!(TrapSpec::new(-1.0, g).is_err());
        let err = ModulationSpec::new(1.2, 100.0, 0.1).unwrap_err();
        assert!(err.to_string().contains("modulation depth must be < 1"));
        assert!(ModulationSpec::new(0.1, 100.0, -0.1).is_err());
    }

    fn fd_gradient(trap: &TrapSpec, p: &Vector3<f64>, t: f64, m: &ModulationSpec) -> Vector3<f64> {
        let h = 1e-9;
        let mut g = Vector3::zeros();
        for k in 0..3 {
            let mut a = *p;
            let mut b = *p;
            a[k] += h;
            b[k] -= h;
            g[k] = (potential(trap, &a, t, m) - potential(trap, &b, t, m)) / (2.0 * h);
        }
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn force_matches_finite_differences(
            x in -150e-6..150e-6f64,
            y in -150e-6..150e-6f64,
            z in -3e-3..3e-3f64,
            t in 0.0..2e-3f64,
            gravity in any::<bool>(),
        ) {
            let trap = paper_trap().with_gravity(gravity);
            let m = ModulationSpec::new(0.15, 2500.0, 1e-3).unwrap();
            let p = Vector3::new(x, y, z);
            let f = force(&trap, &p, t, &m);
            let g = fd_gradient(&trap, &p, t, &m);
            let err = (f + g).norm();
            prop_assert!(err <= 1e-6 * f.norm() + 1e-30,
                "err {err:e} |f| {:e}", f.norm());
        }

        #[test]
        fn depth_factor_stays_in_band(h in 0.0..0.99f64, f in 0.0..1e4f64, t in 0.0..1.0f64, phi in -7.0..7.0f64) {
            let m = ModulationSpec { depth_h: h, freq_f: f, duration_t: 0.5, phase0: phi };
            let d = m.depth_factor(t);
            prop_assert!(d >= 1.0 - h - 1e-15 && d <= 1.0 + h + 1e-15);
        }

        #[test]
        fn frequency_ratio_identity(w0 in 1e-6..1e-3f64, zr in 1e-5..1e-2f64, fr in 10.0..1e4f64) {
            let trap = TrapSpec::from_radial_frequency(fr, BeamGeometry::new(w0, zr).unwrap()).unwrap();
            let (a, b) = trap_frequencies(&trap);
            prop_assert!(((b / a) - w0 / (2f64.sqrt() * zr)).abs() <= 4.0 * f64::EPSILON * (b / a));
            prop_assert!((a - fr).abs() <= 1e-12 * fr);
        }
    }
}
