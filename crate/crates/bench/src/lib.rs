//! Fixtures shared by the benchmarks in `benches/`.

use nalgebra::Vector3;
use paratrap::{BeamGeometry, CloudImage, Ensemble, SampleSpec, TrapSpec};

pub fn paper_trap() -> TrapSpec {
    TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).expect("geometry")).expect("trap")
}

/// Thermal cloud at `fraction * U0 / k_B`.
pub fn cloud(trap: &TrapSpec, n: usize, fraction: f64, seed: u64) -> Ensemble {
    let t = fraction * trap.depth_kelvin();
    paratrap::sample_thermal(trap, &SampleSpec::new(n, t, seed)).expect("sample")
}

/// Points on a 3D lattice through the trap centre, for force evaluation.
pub fn lattice(trap: &TrapSpec, per_axis: usize) -> Vec<Vector3<f64>> {
    let g = trap.geometry;
    let c = |i: usize| i as f64 / (per_axis - 1).max(1) as f64 * 2.0 - 1.0;
    let mut pts = Vec::with_capacity(per_axis.pow(3));
    for i in 0..per_axis {
        for j in 0..per_axis {
            for k in 0..per_axis {
                pts.push(Vector3::new(c(i) * g.w0, c(j) * g.w0, c(k) * g.z_r));
            }
        }
    }
    pts
}

/// Noise-free elliptical Gaussian with a flat offset.
pub fn gaussian_image(width: usize, height: usize) -> CloudImage {
    let mut img = CloudImage::zeros(width, height, 10e-6);
    let (rz, rx) = (40.0 * 10e-6, 15.0 * 10e-6);
    for row in 0..height {
        for col in 0..width {
            let z = img.z_of_col(col as f64) - 12e-6;
            let x = img.x_of_row(row as f64) + 7e-6;
            img.pixels[row * width + col] = 200.0 * (-(z * z) / (rz * rz) - (x * x) / (rx * rx)).exp() + 3.0;
        }
    }
    img
}
