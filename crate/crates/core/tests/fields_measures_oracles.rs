use hydrolim::dynamics::{SystemState, Trajectory, TrajectoryMeta};
use hydrolim::fields::{coarse_grain, kinetic_decomposition, GridSpec};
use hydrolim::measures::{moment, spacetime_moment_estimate, Component, EmpiricalSnapshot, SpaceTimeMeasure};
use hydrolim::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn meta() -> TrajectoryMeta {
    TrajectoryMeta {
        sigma: 1.0,
        potential: "free".into(),
        seed: None,
        b_n: None,
    }
}

/// Random positions and velocities; the samples need not solve any dynamics.
fn random_trajectory(n: usize, samples: usize, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v3 = |r: f64| Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r));
    let states = (0..samples)
        .map(|k| {
            let x = (0..n).map(|_| v3(1.0)).collect();
            let u = (0..n).map(|_| v3(2.0)).collect();
            SystemState::new(k as f64 / (samples - 1) as f64, x, u).unwrap()
        })
        .collect();
    Trajectory::new(states, 1.0 / (samples - 1) as f64, 1, meta()).unwrap()
}

#[test]
fn field_structure_on_random_clouds() {
    let traj = random_trajectory(500, 9, 4);
    let grid = GridSpec::uniform(1.0, 4, Vec3::repeat(-1.0), Vec3::repeat(1.0), [5, 5, 5]).unwrap();
    let f = coarse_grain(&traj, &grid).unwrap();
    for k in 0..grid.time_bins() {
        let total: f64 = f.bin_masses(k).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!(f.min_relative_eigenvalue() >= -1e-12);

    // Identity against the binned second moment, brute force.
    let split = kinetic_decomposition(&traj, &f).unwrap();
    for (k, s) in split.iter().enumerate() {
        let binned: Vec<&SystemState> =
            traj.samples().iter().filter(|st| grid.time_bin(st.t()) == Some(k)).collect();
        let half_m2 = binned
            .iter()
            .map(|st| moment(&EmpiricalSnapshot::from_state(st), 2.0, Component::Velocity))
            .sum::<f64>()
            / (2.0 * binned.len() as f64);
        assert!((s.bulk + s.fluctuation - half_m2).abs() <= 1e-12 * half_m2);
        assert!((s.total - half_m2).abs() <= 1e-12 * half_m2);
    }
}

#[test]
fn cell_means_obey_jensen() {
    let traj = random_trajectory(400, 5, 11);
    let grid = GridSpec::uniform(1.0, 2, Vec3::repeat(-1.0), Vec3::repeat(1.0), [3, 3, 3]).unwrap();
    let f = coarse_grain(&traj, &grid).unwrap();
    let cells = grid.n_cells();
    let mut cube_sum = vec![0.0; grid.time_bins() * cells];
    let mut count = vec![0usize; grid.time_bins() * cells];
    for s in traj.samples() {
        let k = grid.time_bin(s.t()).unwrap();
        for (x, u) in s.positions().iter().zip(s.velocities()) {
            let c = grid.cell_index(x).unwrap();
            cube_sum[k * cells + c] += u.norm().powi(3);
            count[k * cells + c] += 1;
        }
    }
    for k in 0..grid.time_bins() {
        for c in f.occupied(k) {
            let cond = cube_sum[k * cells + c] / count[k * cells + c] as f64;
            assert!(f.mean_velocity(k, c).norm().powi(3) <= cond * (1.0 + 1e-12));
        }
    }
}

#[test]
fn richardson_estimate_recovers_quadratic_moment() {
    // |v(t)|² = t², sampled at 11 points of [0, 1].
    let states: Vec<SystemState> = (0..=10)
        .map(|k| {
            let t = k as f64 / 10.0;
            SystemState::new(t, vec![Vec3::zeros(), Vec3::repeat(1.0)], vec![Vec3::new(t, 0.0, 0.0); 2]).unwrap()
        })
        .collect();
    let traj = Trajectory::new(states, 0.1, 1, meta()).unwrap();
    let q = spacetime_moment_estimate(&SpaceTimeMeasure::from_trajectory(&traj), 2.0).unwrap();
    assert!((q.value - 1.0 / 3.0) > 0.0);
    assert!((q.value - q.error_estimate - 1.0 / 3.0).abs() < 1e-14);
}
