use hydrolim::dynamics::{
    accelerations, hamiltonian, integrate, min_pair_distance, step_verlet, SystemState,
};
use hydrolim::initcond::{gen_burst, gen_lattice_cloud, ScalingMode, ScalingPlan};
use hydrolim::{PotentialSpec, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Classical fourth-order Runge–Kutta on the same equations of motion.
fn rk4(state: &SystemState, pot: &PotentialSpec, sigma: f64, h: f64, steps: usize) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = state.n();
    let mut x = state.positions().to_vec();
    let mut u = state.velocities().to_vec();
    let acc = |x: &[Vec3]| {
        let s = SystemState::new(0.0, x.to_vec(), vec![Vec3::zeros(); n]).unwrap();
        accelerations(&s, pot, sigma).unwrap()
    };
    let axpy = |a: &[Vec3], b: &[Vec3], c: f64| a.iter().zip(b).map(|(p, q)| p + q * c).collect::<Vec<_>>();
    for _ in 0..steps {
        let k1x = u.clone();
        let k1u = acc(&x);
        let k2x = axpy(&u, &k1u, h / 2.0);
        let k2u = acc(&axpy(&x, &k1x, h / 2.0));
        let k3x = axpy(&u, &k2u, h / 2.0);
        let k3u = acc(&axpy(&x, &k2x, h / 2.0));
        let k4x = axpy(&u, &k3u, h);
        let k4u = acc(&axpy(&x, &k3x, h));
        for i in 0..n {
            x[i] += (k1x[i] + k2x[i] * 2.0 + k3x[i] * 2.0 + k4x[i]) * (h / 6.0);
            u[i] += (k1u[i] + k2u[i] * 2.0 + k3u[i] * 2.0 + k4u[i]) * (h / 6.0);
        }
    }
    (x, u)
}

fn two_body() -> SystemState {
    SystemState::new(
        0.0,
        vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)],
        vec![Vec3::new(0.0, -0.3, 0.1), Vec3::new(0.0, 0.3, -0.1)],
    )
    .unwrap()
}

fn one_step_error(h: f64) -> f64 {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let s = two_body();
    let v = step_verlet(&s, &p2, 1.0, h).unwrap();
    let (x, u) = rk4(&s, &p2, 1.0, h / 100.0, 100);
    let dx = v.positions().iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let du = v.velocities().iter().zip(&u).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    dx.max(du)
}

#[test]
fn verlet_step_matches_rk4_to_local_third_order() {
    let e1 = one_step_error(1e-3);
    let e2 = one_step_error(5e-4);
    assert!(e1 < 1e-9, "local error {e1:e}");
    let ratio = e1 / e2;
    assert!((6.0..10.0).contains(&ratio), "local error ratio {ratio}");
}

#[test]
fn two_body_conserves_angular_momentum() {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let traj = integrate(&two_body(), &p2, 1.0, 1.0, 1e-4, 100).unwrap();
    let l = |s: &SystemState| -> Vec3 {
        s.positions().iter().zip(s.velocities()).map(|(x, u)| x.cross(u)).sum()
    };
    let l0 = l(&traj.samples()[0]);
    for s in traj.samples() {
        assert!((l(s) - l0).norm() < 1e-10, "t = {}", s.t());
    }
}

#[test]
fn free_flight_translates_exactly() {
    let x = cloud(50, 1);
    let u = cloud(50, 2);
    let s = SystemState::new(0.0, x.clone(), u.clone()).unwrap();
    let traj = integrate(&s, &PotentialSpec::Free, 1.0, 1.0, 0.01, 10).unwrap();
    let last = traj.samples().last().unwrap();
    assert_eq!(last.t(), 1.0);
    for i in 0..50 {
        assert!((last.positions()[i] - (x[i] + u[i])).norm() < 1e-13);
        assert_eq!(last.velocities()[i], u[i]);
    }
}

#[test]
fn accelerations_sum_to_zero() {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let s = SystemState::new(0.0, cloud(64, 3), vec![Vec3::zeros(); 64]).unwrap();
    let a = accelerations(&s, &p2, 0.1).unwrap();
    let total: Vec3 = a.iter().sum();
    let scale: f64 = a.iter().map(|v| v.norm()).sum();
    assert!(total.norm() <= 1e-12 * scale, "{:e} vs {scale:e}", total.norm());
}

#[test]
fn lattice_min_distance_is_the_spacing() {
    let pts = gen_lattice_cloud(1000, 0.75, 0.0, 0).unwrap();
    let mut brute = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            brute = brute.min((pts[i] - pts[j]).norm());
        }
    }
    let s = SystemState::new(0.0, pts, vec![Vec3::zeros(); 1000]).unwrap();
    assert_eq!(min_pair_distance(&s), brute);
    assert!((brute - 0.075).abs() < 1e-15);
}

fn burst_drift(n: usize, h: f64) -> f64 {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let ic = gen_burst(&gen_lattice_cloud(n, 0.75, 0.0, 0).unwrap(), 1.0).unwrap();
    let plan = ScalingPlan::build(&ic, 1.0, ScalingMode::GeneralQuadratic, &p2).unwrap();
    assert!(plan.certified);
    let traj = integrate(&ic.to_state(), &p2, plan.sigma_n, 1.0, h, 1).unwrap();
    let e0 = hamiltonian(&traj.samples()[0], &p2, plan.sigma_n).unwrap();
    traj.samples()
        .iter()
        .map(|s| (hamiltonian(s, &p2, plan.sigma_n).unwrap() - e0).abs())
        .fold(0.0, f64::max)
        / e0.abs().max(1.0)
}

#[test]
fn energy_drift_is_second_order() {
    let d1 = burst_drift(64, 2e-3);
    let d2 = burst_drift(64, 1e-3);
    assert!(d1 < 1e-6);
    let ratio = d1 / d2;
    assert!((3.2..4.8).contains(&ratio), "drift ratio {ratio} ({d1:e} / {d2:e})");
}

#[test]
fn burst_separation_is_monotone() {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let ic = gen_burst(&gen_lattice_cloud(64, 0.75, 0.1, 5).unwrap(), 1.0).unwrap();
    let plan = ScalingPlan::build(&ic, 1.0, ScalingMode::GeneralQuadratic, &p2).unwrap();
    let traj = integrate(&ic.to_state(), &p2, plan.sigma_n, 1.0, 1e-3, 10).unwrap();
    let d: Vec<f64> = traj.samples().iter().map(min_pair_distance).collect();
    assert!(d.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)));
}

#[test]
fn trajectories_do_not_depend_on_thread_count() {
    let p2 = PotentialSpec::power_law(2.0).unwrap();
    let ic = gen_burst(&gen_lattice_cloud(100, 0.7, 0.05, 8).unwrap(), 1.0).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| integrate(&ic.to_state(), &p2, 1e-3, 0.1, 1e-3, 10).unwrap())
    };
    assert_eq!(run(1), run(3));
}
