//! Simulation of ultracold atoms in an intensity-modulated Gaussian-beam
//! optical dipole trap, with a synthetic time-of-flight imaging pipeline.
//!
//! The pipeline for one experimental shot is
//! [`sample_thermal`] → [`evolve`] → [`expand`] → [`render`] → [`fit_gaussian`],
//! from which the two survival observables (integrated and central peak
//! intensity) are formed relative to an unmodulated reference shot.
//! [`experiments`] drives whole frequency, duration and depth sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collisions;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod io;
pub mod physics;
pub mod sampler;
pub mod stats;
pub mod units;

pub use collisions::{collide, collision_rate, collision_rate_estimate, CollisionSpec};
pub use config::{load_config, parse_config, RunConfig};
pub use dynamics::{apply_loss, evolve, step, DiagnosticsSeries, IntegrationSpec};
pub use error::{Error, Result};
pub use experiments::{
    find_resonance, heating_rate, run_point, run_sweep, saturation_check, Observable, PointConfig,
    ResonanceEstimate, SweepAxis, SweepResult, SweepRow, SweepSpec,
};
pub use imaging::{
    expand, fit_gaussian, integrated_intensity, peak_intensity, render, temperature_from_expansion,
    CloudImage, GaussFit, ImageSpec,
};
pub use physics::{
    force, potential, total_energy, trap_frequencies, u0_from_radial_frequency, BeamGeometry,
    ModulationSpec, PhysConsts, TrapSpec,
};
pub use sampler::{measure_temperature, peak_density, sample_thermal, Ensemble, SampleSpec};
