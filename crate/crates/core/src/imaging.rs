//! Time-of-flight imaging: ballistic expansion, projection onto the (z, x)
//! image plane, 2D Gaussian fits and the two survival observables.
//!
//! Images are atom-count column densities integrated along `y`. Columns run
//! along the beam axis `z`, rows along the vertical radial axis `x` (row 0 at
//! the top, `+x` up).

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::TrapSpec;
use crate::sampler::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    /// Pixel edge in the object plane, m.
    pub pixel_size: f64,
    /// Pixels along the axial direction.
    pub width: usize,
    /// Pixels along the radial direction.
    pub height: usize,
    /// Gaussian optical resolution, m (0 disables blur).
    pub blur_sigma: f64,
    pub shot_noise: bool,
    /// Free-flight time before the image, s.
    pub expansion_time: f64,
    /// Half-width of the central box used for the peak intensity, pixels.
    pub box_halfwidth: usize,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            pixel_size: 10e-6,
            width: 256,
            height: 128,
            blur_sigma: 0.0,
            shot_noise: false,
            expansion_time: 3e-3,
            box_halfwidth: 2,
        }
    }
}

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(Error::invalid("imaging", "pixel_size must be > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("imaging", "image dimensions must be >= 1"));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(Error::invalid("imaging", "blur_sigma must be >= 0"));
        }
        if !(self.expansion_time.is_finite() && self.expansion_time >= 0.0) {
            return Err(Error::invalid("imaging", "expansion_time must be >= 0"));
        }
        if 2 * self.box_halfwidth + 1 > self.width.min(self.height) {
            return Err(Error::invalid("imaging", "central box larger than the image"));
        }
        Ok(())
    }

    /// Physical extent (axial, radial), m.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.pixel_size, self.height as f64 * self.pixel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudImage {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub expansion_time: f64,
    /// Row-major counts, `pixels[row * width + col]`.
    pub pixels: Vec<f64>,
    /// Live atoms that fell outside the frame.
    pub out_of_frame: usize,
}

impl CloudImage {
    pub fn zeros(width: usize, height: usize, pixel_size: f64) -> Self {
        CloudImage {
            width,
            height,
            pixel_size,
            expansion_time: 0.0,
            pixels: vec![0.0; width * height],
            out_of_frame: 0,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Axial coordinate of a column centre, m.
    pub fn z_of_col(&self, col: f64) -> f64 {
        (col + 0.5 - self.width as f64 / 2.0) * self.pixel_size
    }

    /// Radial coordinate of a row centre, m.
    pub fn x_of_row(&self, row: f64) -> f64 {
        (self.height as f64 / 2.0 - row - 0.5) * self.pixel_size
    }

    /// Pixel `(row, col)` containing the point `(z, x)`, if inside the frame.
    pub fn pixel_of(&self, z: f64, x: f64) -> Option<(usize, usize)> {
        let col = (z / self.pixel_size + self.width as f64 / 2.0).floor();
        let row = (self.height as f64 / 2.0 - x / self.pixel_size).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < self.width && (row as usize) < self.height {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }
}

/// Ballistic flight for `t_exp`: `x += v t`, plus the `g t^2 / 2` drop along
/// `-x` when gravity is enabled. No trap, no collisions.
pub fn expand(ens: &mut Ensemble, t_exp: f64, trap: &TrapSpec) -> Result<()> {
    if !(t_exp.is_finite() && t_exp >= 0.0) {
        return Err(Error::invalid("imaging", "expansion time must be >= 0"));
    }
    let drop = if trap.gravity_enabled {
        Vector3::new(-0.5 * trap.consts.gravity_g * t_exp * t_exp, 0.0, 0.0)
    } else {
        Vector3::zeros()
    };
    for i in 0..ens.len() {
        if ens.alive[i] {
            ens.positions[i] += ens.velocities[i] * t_exp + drop;
        }
    }
    ens.time += t_exp;
    Ok(())
}

/// Project the live atoms onto the image plane. Each atom adds one count to
/// the pixel containing its `(z, x)`; then optional blur and Poisson noise.
pub fn render(ens: &Ensemble, spec: &ImageSpec) -> Result<CloudImage> {
    spec.validate()?;
    let mut img = CloudImage::zeros(spec.width, spec.height, spec.pixel_size);
    img.expansion_time = spec.expansion_time;
    let mut n_alive = 0usize;
    for i in ens.alive_indices() {
        n_alive += 1;
        let p = &ens.positions[i];
        match img.pixel_of(p.z, p.x) {
            Some((r, c)) => img.pixels[r * spec.width + c] += 1.0,
            None => img.out_of_frame += 1,
        }
    }
    if n_alive > 0 && img.out_of_frame as f64 > 0.01 * n_alive as f64 {
        log::warn!(
            "{} of {} atoms ({:.1}%) fell outside the {}x{} frame",
            img.out_of_frame,
            n_alive,
            100.0 * img.out_of_frame as f64 / n_alive as f64,
            spec.width,
            spec.height
        );
    }
    if spec.blur_sigma > 0.0 {
        blur(&mut img, spec.blur_sigma / spec.pixel_size);
    }
    if spec.shot_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(ens.seed ^ 0x5107_0015_E000_0000);
        for v in img.pixels.iter_mut() {
            *v = if *v > 0.0 {
                Poisson::new(*v).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            };
        }
    }
    Ok(img)
}

/// Count-conserving separable Gaussian blur: each source pixel spreads its
/// counts over the in-frame part of the kernel, renormalised.
fn blur(img: &mut CloudImage, sigma_px: f64) {
    let radius = (4.0 * sigma_px).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let (w, h) = (img.width as isize, img.height as isize);

    let spread = |src: &[f64], len: isize, stride: isize, lines: isize, line_stride: isize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..lines {
            for i in 0..len {
                let v = src[(line * line_stride + i * stride) as usize];
                if v == 0.0 {
                    continue;
                }
                let lo = (i - radius).max(0);
                let hi = (i + radius).min(len - 1);
                let norm: f64 = (lo..=hi).map(|j| kernel[(j - i + radius) as usize]).sum();
                for j in lo..=hi {
                    out[(line * line_stride + j * stride) as usize] += v * kernel[(j - i + radius) as usize] / norm;
                }
            }
        }
        out
    };
    let rows_done = spread(&img.pixels, w, 1, h, w);
    img.pixels = spread(&rows_done, h, w, w, 1);
}

/// Sum of all pixels.
pub fn integrated_intensity(img: &CloudImage) -> f64 {
    img.pixels.iter().sum()
}

/// Separable 2D Gaussian `A exp(-(z-z0)^2/r_z^2 - (x-x0)^2/r_x^2) + B`.
/// Radii are 1/e radii; lengths in m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussFit {
    pub amplitude: f64,
    /// (z0, x0), m.
    pub center: (f64, f64),
    /// (r_axial, r_radial), m.
    pub radii: (f64, f64),
    pub offset: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl GaussFit {
    pub fn eval(&self, z: f64, x: f64) -> f64 {
        let dz = (z - self.center.0) / self.radii.0;
        let dx = (x - self.center.1) / self.radii.1;
        self.amplitude * (-dz * dz - dx * dx).exp() + self.offset
    }
}

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-8;

// parameter order: A, z0, x0, rz, rx, B; lengths in pixels
fn model_row(p: &Vector6<f64>, z: f64, x: f64) -> (f64, Vector6<f64>) {
    let (a, z0, x0, rz, rx, b) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let dz = z - z0;
    let dx = x - x0;
    let e = (-(dz * dz) / (rz * rz) - (dx * dx) / (rx * rx)).exp();
    let ae = a * e;
    let grad = Vector6::new(
        e,
        2.0 * ae * dz / (rz * rz),
        2.0 * ae * dx / (rx * rx),
        2.0 * ae * dz * dz / (rz * rz * rz),
        2.0 * ae * dx * dx / (rx * rx * rx),
        1.0,
    );
    (ae + b, grad)
}

struct Samples {
    z: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
}

fn cost(p: &Vector6<f64>, s: &Samples) -> f64 {
    s.z.iter()
        .zip(&s.x)
        .zip(&s.v)
        .map(|((&z, &x), &v)| {
            let r = model_row(p, z, x).0 - v;
            r * r
        })
        .sum()
}

fn moment_estimate(s: &Samples) -> Option<Vector6<f64>> {
    let min = s.v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = s.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return None;
    }
    let (mut w, mut mz, mut mx) = (0.0, 0.0, 0.0);
    for i in 0..s.v.len() {
        let q = s.v[i] - min;
        w += q;
        mz += q * s.z[i];
        mx += q * s.x[i];
    }
    mz /= w;
    mx /= w;
    let (mut vz, mut vx) = (0.0, 0.0);
    for i in 0..s.v.len() {
        let q = s.v[i] - min;
        vz += q * (s.z[i] - mz).powi(2);
        vx += q * (s.x[i] - mx).powi(2);
    }
    vz /= w;
    vx /= w;
    if !(vz > 0.0 && vx > 0.0) {
        return None;
    }
    Some(Vector6::new(max - min, mz, mx, (2.0 * vz).sqrt(), (2.0 * vx).sqrt(), min))
}

fn to_fit(p: &Vector6<f64>, img: &CloudImage, residual_norm: f64, converged: bool, iterations: usize) -> GaussFit {
    let ps = img.pixel_size;
    GaussFit {
        amplitude: p[0],
        center: (p[1] * ps, p[2] * ps),
        radii: (p[3].abs() * ps, p[4].abs() * ps),
        offset: p[5],
        residual_norm,
        converged,
        iterations,
    }
}

/// Moment initialisation followed by damped Gauss-Newton (Levenberg-Marquardt)
/// least squares. Converged when the relative parameter step drops below
/// 1e-8 within 100 iterations; otherwise the moment estimate is returned
/// with `converged = false`.
pub fn fit_gaussian(img: &CloudImage) -> Result<GaussFit> {
    let nonzero = img.pixels.iter().filter(|&&v| v != 0.0).count();
    if nonzero < 10 {
        return Err(Error::invalid("imaging", format!("fit needs >= 10 nonzero pixels, image has {nonzero}")));
    }
    let mut s = Samples {
        z: Vec::with_capacity(img.pixels.len()),
        x: Vec::with_capacity(img.pixels.len()),
        v: img.pixels.clone(),
    };
    for r in 0..img.height {
        for c in 0..img.width {
            s.z.push(img.z_of_col(c as f64) / img.pixel_size);
            s.x.push(img.x_of_row(r as f64) / img.pixel_size);
        }
    }
    let start = match moment_estimate(&s) {
        Some(p) => p,
        None => {
            let mean = crate::stats::mean(&s.v);
            let p = Vector6::new(0.0, 0.0, 0.0, img.width as f64, img.height as f64, mean);
            let rn = cost(&p, &s).sqrt();
            return Ok(to_fit(&p, img, rn, false, 0));
        }
    };

    let mut p = start;
    let mut current = cost(&p, &s);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for i in 0..s.v.len() {
            let (m, g) = model_row(&p, s.z[i], s.x[i]);
            let r = m - s.v[i];
            jtj += g * g.transpose();
            jtr += g * r;
        }
        let mut accepted = None;
        while lambda < 1e12 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&jtr);
            let trial = p + delta;
            let c = cost(&trial, &s);
            if c.is_finite() && c <= current {
                accepted = Some((trial, delta, c));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((trial, delta, c)) = accepted else {
            // no descent direction left: stationary point
            converged = true;
            break;
        };
        let scales = [trial[0].abs(), trial[3].abs(), trial[4].abs(), trial[3].abs(), trial[4].abs(), trial[0].abs()];
        let rel = (0..6).map(|k| delta[k].abs() / scales[k].max(1e-300)).fold(0.0, f64::max);
        p = trial;
        current = c;
        if rel < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }

    let extent = (img.width.max(img.height) * 10) as f64;
    let sane = p.iter().all(|v| v.is_finite())
        && p[0] > 0.0
        && p[3].abs() > 0.0
        && p[4].abs() > 0.0
        && p[3].abs() < extent
        && p[4].abs() < extent;
    if converged && sane {
        Ok(to_fit(&p, img, current.sqrt(), true, iterations))
    } else {
        let rn = cost(&start, &s).sqrt();
        Ok(to_fit(&start, img, rn, false, iterations))
    }
}

/// Mean count over the `(2k+1)^2` box centred on the pixel containing the
/// fitted centre.
pub fn peak_intensity(img: &CloudImage, fit: &GaussFit, box_halfwidth: usize) -> Result<f64> {
    let (row, col) = img
        .pixel_of(fit.center.0, fit.center.1)
        .ok_or_else(|| Error::invalid("imaging", "fitted centre lies outside the image"))?;
    let k = box_halfwidth;
    if row < k || col < k || row + k >= img.height || col + k >= img.width {
        return Err(Error::invalid("imaging", "central box clipped at the image edge; enlarge the image"));
    }
    let mut sum = 0.0;
    for r in row - k..=row + k {
        for c in col - k..=col + k {
            sum += img.get(r, c);
        }
    }
    Ok(sum / ((2 * k + 1) * (2 * k + 1)) as f64)
}

/// Time-of-flight temperature from Gaussian widths (standard deviations)
/// `sigma1` at `t1` and `sigma2` at `t2`:
/// `k_B T = m (sigma2^2 - sigma1^2) / (t2^2 - t1^2)`.
pub fn temperature_from_expansion(
    sigma1: f64,
    t1: f64,
    sigma2: f64,
    t2: f64,
    mass: f64,
    boltzmann_k: f64,
) -> Result<f64> {
    if !(t2 > t1 && t1 >= 0.0) {
        return Err(Error::invalid("imaging", "expansion times must satisfy t2 > t1 >= 0"));
    }
    if !(sigma2 > sigma1 && sigma1 >= 0.0) {
        return Err(Error::invalid("imaging", "cloud width must grow during expansion"));
    }
    Ok(mass * (sigma2 * sigma2 - sigma1 * sigma1) / ((t2 * t2 - t1 * t1) * boltzmann_k))
}
