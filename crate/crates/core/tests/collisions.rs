use nalgebra::Vector3;
use paratrap::collisions::CollisionStats;
use paratrap::{
    collide, evolve, peak_density, sample_thermal, BeamGeometry, CollisionSpec, Ensemble, IntegrationSpec,
    ModulationSpec, SampleSpec, TrapSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn paper_trap() -> TrapSpec {
    TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).unwrap()).unwrap()
}

fn kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

fn component_kurtoses(ens: &Ensemble) -> [f64; 3] {
    let k = |a: usize| kurtosis(&ens.velocities.iter().map(|v| v[a]).collect::<Vec<_>>());
    [k(0), k(1), k(2)]
}

#[test]
fn two_temperature_gas_relaxes_to_maxwellian() {
    // static atoms spread over 4x4x4 cells, half of them 4x hotter
    let trap = paper_trap();
    let spec = CollisionSpec::for_trap(&trap, 2000.0, 21);
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (hr, hz) = (2.0 * spec.cell_size, 2.0 * spec.cell_size_axial);
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n {
        let u = |rng: &mut ChaCha8Rng| 2.0 * rng.random::<f64>() - 1.0;
        positions.push(Vector3::new(hr * u(&mut rng), hr * u(&mut rng), hz * u(&mut rng)));
        let s = if i % 2 == 0 { 0.02 } else { 0.04 };
        let g = |rng: &mut ChaCha8Rng| s * rng.sample::<f64, _>(StandardNormal);
        velocities.push(Vector3::new(g(&mut rng), g(&mut rng), g(&mut rng)));
    }
    let mut ens = Ensemble::from_states(positions, velocities, 5);
    // a 1:4 temperature mixture has kurtosis 3 * 8.5 / 6.25 = 4.08
    for k in component_kurtoses(&ens) {
        assert!((k - 4.08).abs() < 0.15, "initial kurtosis {k}");
    }
    let mut total = CollisionStats::default();
    let mut step = 0;
    while (2 * total.collisions) < 5 * n {
        let s = collide(&mut ens, &spec, 1e-4, step).unwrap();
        total.collisions += s.collisions;
        step += 1;
        assert!(step < 10_000, "too few collisions");
    }
    for k in component_kurtoses(&ens) {
        assert!((k / 3.0 - 1.0).abs() < 0.05, "kurtosis after {step} steps: {k}");
    }
}

#[test]
fn thermal_cloud_keeps_its_temperature() {
    let trap = paper_trap();
    let t = 0.02 * trap.depth_kelvin();
    let mut ens = sample_thermal(&trap, &SampleSpec::new(20_000, t, 17)).unwrap();
    let weight = 6e19 / peak_density(&ens, &trap).unwrap();
    let cspec = CollisionSpec::for_trap(&trap, weight, 99);
    let m = ModulationSpec::none(0.0);
    let ispec = IntegrationSpec {
        diag_interval: 100,
        ..IntegrationSpec::for_modulation(&trap, &m)
    };
    let m = ModulationSpec::none(10_000.0 * ispec.dt);
    let diag = evolve(&mut ens, &trap, &m, &ispec, Some(&cspec)).unwrap();
    assert_eq!(diag.len(), 101);
    assert_eq!(*diag.n_alive.last().unwrap(), 20_000);
    // average over the last 2000 steps to suppress kinetic/potential exchange
    let tail = &diag.temperature[81..];
    let late = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!((late / t - 1.0).abs() < 0.01, "T went {t:e} -> {late:e}");
    let e0 = diag.mean_energy[0];
    let e1 = *diag.mean_energy.last().unwrap();
    assert!(((e1 - e0) / e0).abs() < 1e-4, "mean energy {e0:e} -> {e1:e}");
}
