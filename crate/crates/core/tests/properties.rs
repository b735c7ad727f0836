use hydrolim::dynamics::{accelerations, pair_acceleration, SystemState};
use hydrolim::fields::{coarse_grain, kinetic_decomposition, GridSpec};
use hydrolim::initcond::{b_condition, compute_b_n, gen_burst, ScalingMode};
use hydrolim::measures::{char_fn, moment, tail_mass, Component, EmpiricalSnapshot};
use hydrolim::dynamics::{Trajectory, TrajectoryMeta};
use hydrolim::{PotentialSpec, Vec3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn distinct(points: &[Vec3]) -> bool {
    (0..points.len()).all(|i| (i + 1..points.len()).all(|j| (points[i] - points[j]).norm() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_terms_are_antisymmetric(xi in vec3(2.0), xj in vec3(2.0), p in 1.5f64..4.0, sigma in 0.01f64..2.0) {
        prop_assume!((xi - xj).norm() > 1e-6);
        let pot = PotentialSpec::power_law(p).unwrap();
        let a = pair_acceleration(&pot, sigma, &xi, &xj).unwrap();
        let b = pair_acceleration(&pot, sigma, &xj, &xi).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn accelerations_sum_to_zero(points in prop::collection::vec(vec3(1.0), 2..24)) {
        prop_assume!(distinct(&points));
        let n = points.len();
        let s = SystemState::new(0.0, points, vec![Vec3::zeros(); n]).unwrap();
        let a = accelerations(&s, &PotentialSpec::power_law(2.0).unwrap(), 0.05).unwrap();
        let scale: f64 = a.iter().map(|v| v.norm()).sum();
        prop_assert!(a.iter().sum::<Vec3>().norm() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn characteristic_function_is_bounded(
        x in prop::collection::vec(vec3(5.0), 1..20),
        y in vec3(3.0),
        w in vec3(3.0),
    ) {
        let u: Vec<Vec3> = x.iter().map(|p| p * 0.7).collect();
        let snap = EmpiricalSnapshot::new(0.0, x, u).unwrap();
        prop_assert!(char_fn(&snap, &y, &w).norm() <= 1.0 + 1e-15);
        prop_assert_eq!(char_fn(&snap, &Vec3::zeros(), &Vec3::zeros()).re, 1.0);
    }

    #[test]
    fn tail_mass_obeys_moment_bound(v in prop::collection::vec(vec3(4.0), 1..40), r in 0.1f64..20.0) {
        let x = vec![Vec3::zeros(); v.len()];
        let snap = EmpiricalSnapshot::new(0.0, x, v).unwrap();
        let tail = tail_mass(&snap, 2.0, r, Component::Velocity);
        prop_assert!(tail <= r.powf(-0.5) * moment(&snap, 3.0, Component::Velocity));
    }

    #[test]
    fn kinetic_split_is_exact(v in prop::collection::vec(vec3(3.0), 4..40), seed in 0u64..1000) {
        let n = v.len();
        let x: Vec<Vec3> = (0..n)
            .map(|i| Vec3::new(i as f64 / n as f64, ((i as u64 * 7 + seed) % 10) as f64 / 10.0, 0.5))
            .collect();
        let s = SystemState::new(0.0, x.clone(), v.clone()).unwrap();
        let s1 = SystemState::new(1.0, x, v).unwrap();
        let meta = TrajectoryMeta { sigma: 1.0, potential: "free".into(), seed: None, b_n: None };
        let traj = Trajectory::new(vec![s.clone(), s1], 1.0, 1, meta).unwrap();
        let grid = GridSpec::uniform(1.0, 1, Vec3::repeat(-0.1), Vec3::repeat(1.1), [3, 3, 3]).unwrap();
        let f = coarse_grain(&traj, &grid).unwrap();
        let split = &kinetic_decomposition(&traj, &f).unwrap()[0];
        let half = moment(&EmpiricalSnapshot::from_state(&s), 2.0, Component::Velocity) / 2.0;
        prop_assert!((split.bulk + split.fluctuation - half).abs() <= 1e-12 * half.max(1e-300));
    }

    #[test]
    fn b_n_is_the_largest_feasible_bound(
        points in prop::collection::vec(vec3(1.0), 2..16),
        lambda in 0.1f64..3.0,
        t_end in 0.1f64..5.0,
    ) {
        prop_assume!(distinct(&points));
        let ic = gen_burst(&points, lambda).unwrap();
        let b = compute_b_n(&ic, t_end, ScalingMode::GeneralQuadratic).unwrap();
        let (x, u) = (ic.positions(), ic.velocities());
        let mut worst_inflated = f64::INFINITY;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let (xij, uij) = (x[i] - x[j], u[i] - u[j]);
                prop_assert!(b_condition(&xij, &uij, t_end, b) >= 0.0);
                worst_inflated = worst_inflated.min(b_condition(&xij, &uij, t_end, b * (1.0 + 1e-6)));
            }
        }
        prop_assert!(worst_inflated < 0.0);
        let burst = compute_b_n(&ic, t_end, ScalingMode::BurstClosedForm).unwrap();
        prop_assert!(b >= burst);
    }

    #[test]
    fn burst_alignment_is_lambda_d_min_squared(points in prop::collection::vec(vec3(1.0), 2..16), lambda in 0.1f64..3.0) {
        prop_assume!(distinct(&points));
        let ic = gen_burst(&points, lambda).unwrap();
        let expected = lambda * ic.d_min() * ic.d_min();
        prop_assert!((ic.align_min() - expected).abs() <= 1e-12 * expected);
    }
}
