use paratrap::dynamics::relative_energy_drift;
use paratrap::{
    evolve, sample_thermal, total_energy, trap_frequencies, BeamGeometry, Ensemble, IntegrationSpec, ModulationSpec,
    SampleSpec, TrapSpec,
};
use proptest::prelude::*;

fn paper_trap() -> TrapSpec {
    TrapSpec::from_radial_frequency(1250.0, BeamGeometry::new(55e-6, 750e-6).unwrap()).unwrap()
}

fn cloud(trap: &TrapSpec, n: usize, fraction: f64, seed: u64) -> Ensemble {
    sample_thermal(trap, &SampleSpec::new(n, fraction * trap.depth_kelvin(), seed)).unwrap()
}

/// Mean energy gain per initial atom in units of U0. Lost atoms count with
/// their energy at the moment of loss, so escape does not hide heating.
fn energy_gain(trap: &TrapSpec, start: &Ensemble, m: &ModulationSpec) -> f64 {
    let mut ens = start.clone();
    let e = |ens: &Ensemble, t: f64| -> f64 {
        (0..ens.len())
            .map(|i| total_energy(trap, &ens.positions[i], &ens.velocities[i], t, &ModulationSpec::none(0.0)))
            .sum::<f64>()
    };
    let before = e(&ens, 0.0);
    let ispec = IntegrationSpec::for_modulation(trap, m);
    evolve(&mut ens, trap, m, &ispec, None).unwrap();
    (e(&ens, ens.time) - before) / (ens.len() as f64 * trap.depth_u0)
}

#[test]
fn gain_spectrum_peaks_at_twice_the_radial_frequency() {
    let trap = paper_trap();
    let (fr, _) = trap_frequencies(&trap);
    let start = cloud(&trap, 400, 0.02, 1);
    let freqs: Vec<f64> = (0..=20).map(|i| 1500.0 + 100.0 * i as f64).collect();
    let gains: Vec<f64> = freqs
        .iter()
        .map(|&f| energy_gain(&trap, &start, &ModulationSpec::new(0.05, f, 0.02).unwrap()))
        .collect();
    let (best, _) = gains.iter().enumerate().fold((0, f64::MIN), |a, (i, &g)| if g > a.1 { (i, g) } else { a });
    assert!((freqs[best] / (2.0 * fr) - 1.0).abs() < 0.05, "max gain at {} Hz", freqs[best]);
}

#[test]
fn subharmonic_response_at_the_radial_frequency() {
    let trap = paper_trap();
    let (fr, _) = trap_frequencies(&trap);
    let start = cloud(&trap, 400, 0.02, 2);
    let gain = |f: f64| energy_gain(&trap, &start, &ModulationSpec::new(0.3, f, 0.05).unwrap());
    let freqs: Vec<f64> = (0..=12).map(|i| 950.0 + 50.0 * i as f64).collect();
    let gains: Vec<f64> = freqs.iter().map(|&f| gain(f)).collect();
    let fundamental = gain(2.0 * fr);
    let (best, g) = gains.iter().enumerate().fold((0, f64::MIN), |a, (i, &g)| if g > a.1 { (i, g) } else { a });
    assert!((freqs[best] / fr - 1.0).abs() < 0.05, "secondary max at {} Hz", freqs[best]);
    assert!(best > 0 && best < freqs.len() - 1, "secondary max on the window edge");
    assert!(g > 3.0 * gains[0].max(*gains.last().unwrap()), "no clear secondary peak: {gains:?}");
    assert!(g < fundamental, "secondary {g} vs fundamental {fundamental}");
}

#[test]
fn resonant_drive_pumps_energy_and_off_resonant_drive_barely_does() {
    let trap = paper_trap();
    let start = cloud(&trap, 500, 0.05, 3);
    let control = energy_gain(&trap, &start, &ModulationSpec::none(0.05));
    let resonant = energy_gain(&trap, &start, &ModulationSpec::new(0.15, 2500.0, 0.05).unwrap());
    let off = energy_gain(&trap, &start, &ModulationSpec::new(0.15, 700.0, 0.05).unwrap());
    assert!(control.abs() < 1e-4, "control {control:e}");
    assert!(resonant > control + 1e-3, "resonant {resonant:e}");
    assert!(off.abs() * 5.0 < resonant, "off-resonant {off:e} vs resonant {resonant:e}");
}

#[test]
fn ensemble_energy_has_no_secular_drift() {
    let trap = paper_trap();
    let start = cloud(&trap, 100, 0.02, 4);
    let m = ModulationSpec::none(0.0);
    let ispec = IntegrationSpec::for_modulation(&trap, &m);
    let off = ModulationSpec::none(0.0);
    let mut ens = start.clone();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(100_001); ens.len()];
    let record = |ens: &Ensemble, series: &mut Vec<Vec<f64>>| {
        for (i, s) in series.iter_mut().enumerate() {
            s.push(total_energy(&trap, &ens.positions[i], &ens.velocities[i], ens.time, &off));
        }
    };
    record(&ens, &mut series);
    for _ in 0..100_000 {
        paratrap::step(&mut ens, &trap, &m, ispec.dt).unwrap();
        record(&ens, &mut series);
    }
    let worst = series.iter().map(|s| relative_energy_drift(s)).fold(0.0, f64::max);
    assert!(worst < 1e-6, "worst per-atom drift {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn atoms_are_never_revived(seed in any::<u64>(), h in 0.0f64..0.5, f in 500.0f64..4000.0) {
        let trap = paper_trap();
        let mut ens = cloud(&trap, 200, 0.3, seed);
        let m = ModulationSpec::new(h, f, 0.01).unwrap();
        let ispec = IntegrationSpec { diag_interval: 25, ..IntegrationSpec::for_modulation(&trap, &m) };
        let mut dead_before = vec![false; ens.len()];
        let mut done = 0;
        let n_steps = ispec.steps_for(m.duration_t);
        let checkpoints: Vec<usize> = (1..=n_steps).step_by(50).collect();
        let diag = paratrap::dynamics::evolve_with_checkpoints(&mut ens, &trap, &m, &ispec, None, n_steps, &checkpoints, |_, e| {
            for (i, &alive) in e.alive.iter().enumerate() {
                assert!(!(dead_before[i] && alive), "atom {i} revived");
                dead_before[i] = !alive;
            }
            done += 1;
            Ok(())
        }).unwrap();
        prop_assert_eq!(done, checkpoints.len());
        prop_assert!(diag.n_alive.windows(2).all(|w| w[1] <= w[0]));
    }
}
