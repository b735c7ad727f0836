//! Direct-summation dynamics of the rescaled N-body system
//!
//! ```text
//! dx_i/dt = u_i
//! du_i/dt = -Σ_{j≠i} (1/σ) Φ'(|x_i - x_j|/σ) (x_i - x_j)/|x_i - x_j|
//! ```
//!
//! Forces are accumulated row by row, `i` ascending and `j` ascending within
//! a row. Rows are independent, so evaluating them on any number of threads
//! yields bit-identical results.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::Vec3;

/// Positions and velocities of `N ≥ 2` particles at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    t: f64,
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
}

impl SystemState {
    /// Validates lengths, finiteness and pairwise distinctness (`O(N²)`).
    pub fn new(t: f64, positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        let state = Self::from_parts(t, positions, velocities)?;
        if let Some((i, j)) = first_coincident_pair(&state.positions) {
            return Err(Error::Coincident { i, j });
        }
        Ok(state)
    }

    /// As [`SystemState::new`] but without the pairwise scan; the caller
    /// vouches that no two positions coincide.
    pub(crate) fn from_parts(t: f64, positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::arg(format!(
                "{} positions but {} velocities",
                positions.len(),
                velocities.len()
            )));
        }
        if positions.len() < 2 {
            return Err(Error::arg("a state needs at least two particles"));
        }
        if !t.is_finite() {
            return Err(Error::arg("non-finite time"));
        }
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        if let Some(i) = positions
            .iter()
            .zip(&velocities)
            .position(|(x, u)| !finite(x) || !finite(u))
        {
            return Err(Error::arg(format!("particle {i} has a non-finite component")));
        }
        Ok(Self {
            t,
            positions,
            velocities,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

fn first_coincident_pair(positions: &[Vec3]) -> Option<(usize, usize)> {
    positions
        .par_iter()
        .enumerate()
        .filter_map(|(i, xi)| {
            positions[i + 1..]
                .iter()
                .position(|xj| xi == xj)
                .map(|k| (i, i + 1 + k))
        })
        .min()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("interaction scale σ must be positive, got {sigma}")))
    }
}

/// Acceleration contribution on a particle at `xi` from one at `xj`.
pub fn pair_acceleration(potential: &PotentialSpec, sigma: f64, xi: &Vec3, xj: &Vec3) -> Result<Vec3> {
    check_sigma(sigma)?;
    let d = xi - xj;
    let r2 = d.norm_squared();
    if r2 == 0.0 {
        return Err(Error::Coincident { i: 0, j: 1 });
    }
    Ok(d * Kernel::new(potential, sigma).eval(r2))
}

/// `-(1/σ) Φ'(r/σ) / r` as a function of `r²`. Integer power laws reduce to
/// `σ^{p-1} / r^{p+1}`: one square root and one division per pair.
enum Kernel<'a> {
    Free,
    IntPower { c: f64, half: i32, odd: bool },
    General { potential: &'a PotentialSpec, sigma: f64 },
}

impl<'a> Kernel<'a> {
    fn new(potential: &'a PotentialSpec, sigma: f64) -> Self {
        match potential {
            PotentialSpec::Free => Kernel::Free,
            PotentialSpec::PowerLaw { p } if p.fract() == 0.0 && *p <= 60.0 => {
                let c = sigma.powi(*p as i32 - 1);
                if c.is_normal() {
                    let e = *p as i32 + 1;
                    return Kernel::IntPower {
                        c,
                        half: e / 2,
                        odd: e % 2 == 1,
                    };
                }
                Kernel::General { potential, sigma }
            }
            _ => Kernel::General { potential, sigma },
        }
    }

    #[inline(always)]
    fn eval(&self, r2: f64) -> f64 {
        match *self {
            Kernel::Free => 0.0,
            Kernel::IntPower { c, half, odd } => {
                let mut den = r2.powi(half);
                if odd {
                    den *= r2.sqrt();
                }
                c / den
            }
            Kernel::General { potential, sigma } => {
                let r = r2.sqrt();
                potential.scaled_repulsion(r, sigma) / r
            }
        }
    }
}

fn acceleration_row(kernel: &Kernel, positions: &[Vec3], i: usize) -> Result<Vec3> {
    let xi = positions[i];
    let mut acc = Vec3::zeros();
    for (j, xj) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = xi - xj;
        let r2 = d.norm_squared();
        if r2 == 0.0 {
            return Err(Error::Coincident { i: i.min(j), j: i.max(j) });
        }
        acc += d * kernel.eval(r2);
    }
    Ok(acc)
}

pub(crate) fn accelerations_of(positions: &[Vec3], potential: &PotentialSpec, sigma: f64) -> Result<Vec<Vec3>> {
    check_sigma(sigma)?;
    let kernel = Kernel::new(potential, sigma);
    let rows: Vec<Result<Vec3>> = (0..positions.len())
        .into_par_iter()
        .map(|i| acceleration_row(&kernel, positions, i))
        .collect();
    // Sequential pass so the reported pair does not depend on scheduling.
    rows.into_iter().collect()
}

/// Accelerations of all particles; errors name the first coincident pair.
pub fn accelerations(state: &SystemState, potential: &PotentialSpec, sigma: f64) -> Result<Vec<Vec3>> {
    accelerations_of(&state.positions, potential, sigma)
}

pub fn max_acceleration_norm(state: &SystemState, potential: &PotentialSpec, sigma: f64) -> Result<f64> {
    Ok(accelerations(state, potential, sigma)?
        .iter()
        .map(|a| a.norm())
        .fold(0.0, f64::max))
}

/// `(1/2N) Σ |u_i|²`.
pub fn kinetic_energy(state: &SystemState) -> f64 {
    let n = state.n() as f64;
    state.velocities.iter().map(|u| u.norm_squared()).sum::<f64>() / (2.0 * n)
}

/// `Σ_{i<j} Φ(|x_i - x_j|/σ)`, summed row by row in index order.
fn unordered_pair_potential(state: &SystemState, potential: &PotentialSpec, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if potential.is_free() {
        return match first_coincident_pair(&state.positions) {
            Some((i, j)) => Err(Error::Coincident { i, j }),
            None => Ok(0.0),
        };
    }
    let x = &state.positions;
    let rows: Vec<Result<f64>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in i + 1..x.len() {
                let r = (x[i] - x[j]).norm();
                if r == 0.0 {
                    return Err(Error::Coincident { i, j });
                }
                s += potential.phi(r / sigma);
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for row in rows {
        total += row?;
    }
    Ok(total)
}

/// Total energy with mass `1/N` per particle and pair energy
/// `(1/N) Φ(r/σ)` summed over ordered pairs `i ≠ j`:
/// `(1/2N) Σ|u_i|² + (1/N) Σ_{i≠j} Φ(|x_i - x_j|/σ)`.
///
/// The ordered-pair sum counts each interaction twice, so this quantity is
/// not the conserved one; see [`hamiltonian`].
pub fn total_energy(state: &SystemState, potential: &PotentialSpec, sigma: f64) -> Result<f64> {
    let pairs = unordered_pair_potential(state, potential, sigma)?;
    Ok(kinetic_energy(state) + 2.0 * pairs / state.n() as f64)
}

/// The energy conserved by the equations of motion:
/// `(1/2N) Σ|u_i|² + (1/N) Σ_{i<j} Φ(|x_i - x_j|/σ)`.
pub fn hamiltonian(state: &SystemState, potential: &PotentialSpec, sigma: f64) -> Result<f64> {
    let pairs = unordered_pair_potential(state, potential, sigma)?;
    Ok(kinetic_energy(state) + pairs / state.n() as f64)
}

/// Minimum distance over unordered pairs; zero when two points coincide.
pub fn min_pair_distance(state: &SystemState) -> f64 {
    min_pair_distance_of(&state.positions)
}

pub(crate) fn min_pair_distance_of(x: &[Vec3]) -> f64 {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            x[i + 1..]
                .iter()
                .map(|xj| (x[i] - xj).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
        .sqrt()
}

fn verlet_with(
    state: &SystemState,
    acc: &[Vec3],
    potential: &PotentialSpec,
    sigma: f64,
    h: f64,
    t_next: f64,
) -> Result<(SystemState, Vec<Vec3>)> {
    let half = 0.5 * h;
    let mut velocities: Vec<Vec3> = state
        .velocities
        .iter()
        .zip(acc)
        .map(|(u, a)| u + a * half)
        .collect();
    let positions: Vec<Vec3> = state
        .positions
        .iter()
        .zip(&velocities)
        .map(|(x, u)| x + u * h)
        .collect();
    let acc_next = accelerations_of(&positions, potential, sigma).map_err(|e| match e {
        Error::Coincident { i, j } => Error::StepCollision { i, j },
        other => other,
    })?;
    for (u, a) in velocities.iter_mut().zip(&acc_next) {
        *u += a * half;
    }
    let next = SystemState::from_parts(t_next, positions, velocities)?;
    Ok((next, acc_next))
}

/// One kick–drift–kick velocity Verlet step. A negative `h` steps backward
/// in time, which undoes a forward step up to rounding.
pub fn step_verlet(state: &SystemState, potential: &PotentialSpec, sigma: f64, h: f64) -> Result<SystemState> {
    if !(h.is_finite() && h != 0.0) {
        return Err(Error::arg(format!("step size must be finite and nonzero, got {h}")));
    }
    let acc = accelerations(state, potential, sigma)?;
    verlet_with(state, &acc, potential, sigma, h, state.t + h).map(|(s, _)| s)
}

/// Run metadata carried alongside the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub sigma: f64,
    pub potential: String,
    pub seed: Option<u64>,
    /// Certified acceleration bound of the run, when one exists.
    pub b_n: Option<f64>,
}

/// Time-ordered samples taken every `stride` steps of size `h`, from `t = 0`
/// through `t = T` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<SystemState>,
    h: f64,
    stride: usize,
    meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(samples: Vec<SystemState>, h: f64, stride: usize, meta: TrajectoryMeta) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::arg("trajectory has no samples"))?;
        if first.t != 0.0 {
            return Err(Error::arg(format!("first sample at t = {} instead of 0", first.t)));
        }
        let n = first.n();
        for w in samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::arg(format!("sample times not increasing at t = {}", w[1].t)));
            }
            if w[1].n() != n {
                return Err(Error::arg("samples with differing particle counts"));
            }
        }
        if !(h > 0.0) || stride == 0 {
            return Err(Error::arg("trajectory needs h > 0 and stride ≥ 1"));
        }
        Ok(Self {
            samples,
            h,
            stride,
            meta,
        })
    }

    pub fn samples(&self) -> &[SystemState] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples[0].n()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn sigma(&self) -> f64 {
        self.meta.sigma
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: TrajectoryMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

/// Number of steps `T/h`, required to be a positive integer multiple of
/// `stride` (to a relative tolerance of 1e-9).
pub fn step_count(t_end: f64, h: f64, stride: usize) -> Result<usize> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::arg(format!("horizon T must be positive, got {t_end}")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::arg(format!("step h must be positive, got {h}")));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    let ratio = t_end / h;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-9 * steps {
        return Err(Error::arg(format!("T/h = {ratio} is not a positive integer")));
    }
    let steps = steps as usize;
    if steps % stride != 0 {
        return Err(Error::arg(format!("T/h = {steps} is not a multiple of stride {stride}")));
    }
    Ok(steps)
}

/// Default step `min(1e-3·T, 0.1·d_min / max(U, sqrt(B_N·d_min)))`, shrunk so
/// that `T/h` is a multiple of `stride`. Returns `(h, steps)`.
pub fn default_step(t_end: f64, d_min: f64, speed: f64, accel_bound: f64, stride: usize) -> (f64, usize) {
    let scale = speed.max((accel_bound * d_min).sqrt());
    let mut h = 1e-3 * t_end;
    if scale > 0.0 {
        h = h.min(0.1 * d_min / scale);
    }
    let stride = stride.max(1);
    let blocks = (t_end / h / stride as f64 - 1e-9).ceil().max(1.0) as usize;
    let steps = blocks * stride;
    (t_end / steps as f64, steps)
}

/// Integrates with velocity Verlet, recording every `stride`-th state
/// including `t = 0` and `t = T`. Sample times are `k·T/steps` exactly.
pub fn integrate(
    ic: &SystemState,
    potential: &PotentialSpec,
    sigma: f64,
    t_end: f64,
    h: f64,
    stride: usize,
) -> Result<Trajectory> {
    integrate_with_accelerations(ic, potential, sigma, t_end, h, stride).map(|(traj, _)| traj)
}

/// As [`integrate`], also returning the accelerations at every sample. They
/// are the ones the integrator computed, identical to [`accelerations`] of
/// each sample.
pub fn integrate_with_accelerations(
    ic: &SystemState,
    potential: &PotentialSpec,
    sigma: f64,
    t_end: f64,
    h: f64,
    stride: usize,
) -> Result<(Trajectory, Vec<Vec<Vec3>>)> {
    let steps = step_count(t_end, h, stride)?;
    check_sigma(sigma)?;
    let mut state = ic.clone().with_time(0.0);
    let mut acc = accelerations(&state, potential, sigma).map_err(|e| Error::StepFailed {
        t: 0.0,
        source: Box::new(e),
    })?;
    let mut samples = Vec::with_capacity(steps / stride + 1);
    let mut sample_acc = Vec::with_capacity(steps / stride + 1);
    samples.push(state.clone());
    sample_acc.push(acc.clone());
    for k in 1..=steps {
        let t_next = t_end * (k as f64 / steps as f64);
        let (next, acc_next) =
            verlet_with(&state, &acc, potential, sigma, h, t_next).map_err(|e| Error::StepFailed {
                t: state.t,
                source: Box::new(e),
            })?;
        state = next;
        acc = acc_next;
        if k % stride == 0 {
            samples.push(state.clone());
            sample_acc.push(acc.clone());
        }
    }
    let traj = Trajectory::new(
        samples,
        h,
        stride,
        TrajectoryMeta {
            sigma,
            potential: potential.descriptor(),
            seed: None,
            b_n: None,
        },
    )?;
    Ok((traj, sample_acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn two_body(d: f64) -> SystemState {
        SystemState::new(0.0, vec![v(0., 0., 0.), v(d, 0., 0.)], vec![Vec3::zeros(); 2]).unwrap()
    }

    #[test]
    fn pair_acceleration_two_body_value() {
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        let a = pair_acceleration(&p2, 1.0, &v(0., 0., 0.), &v(2., 0., 0.)).unwrap();
        assert_eq!(a, v(-0.25, 0., 0.));
        let b = pair_acceleration(&p2, 1.0, &v(2., 0., 0.), &v(0., 0., 0.)).unwrap();
        assert_eq!(a, -b);
        let free = pair_acceleration(&PotentialSpec::Free, 1.0, &v(1., 2., 3.), &v(0., 0., 0.)).unwrap();
        assert_eq!(free, Vec3::zeros());
    }

    #[test]
    fn pair_acceleration_errors() {
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        let x = v(1., 1., 1.);
        assert!(matches!(pair_acceleration(&p2, 1.0, &x, &x), Err(Error::Coincident { .. })));
        assert!(matches!(
            pair_acceleration(&p2, 0.0, &x, &v(0., 0., 0.)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn two_body_accelerations_and_energy() {
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        let s = two_body(2.0);
        let a = accelerations(&s, &p2, 1.0).unwrap();
        assert_eq!(a, vec![v(-0.25, 0., 0.), v(0.25, 0., 0.)]);
        assert_eq!(max_acceleration_norm(&s, &p2, 1.0).unwrap(), 0.25);
        assert_eq!(total_energy(&s, &p2, 1.0).unwrap(), 0.5);
        assert_eq!(hamiltonian(&s, &p2, 1.0).unwrap(), 0.25);
    }

    #[test]
    fn energy_kinetic_only() {
        let s = SystemState::new(
            0.0,
            vec![v(0., 0., 0.), v(2., 0., 0.)],
            vec![v(1., 0., 0.), v(0., -1., 0.)],
        )
        .unwrap();
        assert_eq!(total_energy(&s, &PotentialSpec::Free, 1.0).unwrap(), 0.5);
        assert_eq!(total_energy(&two_body(2.0), &PotentialSpec::Free, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn coincident_state_rejected_with_indices() {
        let x = vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 0., 0.)];
        let err = SystemState::new(0.0, x.clone(), vec![Vec3::zeros(); 3]).unwrap_err();
        assert_eq!(err, Error::Coincident { i: 0, j: 2 });
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        assert_eq!(
            accelerations_of(&x, &p2, 1.0).unwrap_err(),
            Error::Coincident { i: 0, j: 2 }
        );
    }

    #[test]
    fn state_invariants() {
        assert!(SystemState::new(0.0, vec![v(0., 0., 0.)], vec![v(0., 0., 0.)]).is_err());
        assert!(SystemState::new(0.0, vec![v(0., 0., 0.), v(1., 0., 0.)], vec![v(0., 0., 0.)]).is_err());
        assert!(SystemState::new(
            0.0,
            vec![v(0., 0., 0.), v(f64::NAN, 0., 0.)],
            vec![Vec3::zeros(); 2]
        )
        .is_err());
    }

    #[test]
    fn min_distance_examples() {
        assert_eq!(min_pair_distance(&two_body(2.0)), 2.0);
        let s = SystemState::new(
            0.0,
            vec![v(0., 0., 0.), v(1., 0., 0.), v(3., 0., 0.)],
            vec![Vec3::zeros(); 3],
        )
        .unwrap();
        assert_eq!(min_pair_distance(&s), 1.0);
    }

    #[test]
    fn free_flight_single_step() {
        let s = SystemState::new(
            0.0,
            vec![v(0., 0., 0.), v(1., 0., 0.)],
            vec![v(1., 2., 3.), v(-1., 0.5, 0.)],
        )
        .unwrap();
        let next = step_verlet(&s, &PotentialSpec::Free, 1.0, 0.125).unwrap();
        assert_eq!(next.positions()[0], v(0.125, 0.25, 0.375));
        assert_eq!(next.positions()[1], v(0.875, 0.0625, 0.));
        assert_eq!(next.velocities(), s.velocities());
        assert_eq!(next.t(), 0.125);
    }

    #[test]
    fn reversibility() {
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        let s = SystemState::new(
            0.0,
            vec![v(0., 0., 0.), v(1., 0.2, 0.), v(0.3, 0.9, -0.4)],
            vec![v(0.1, 0., 0.3), v(-0.2, 0.4, 0.), v(0., -0.1, 0.2)],
        )
        .unwrap();
        let fwd = step_verlet(&s, &p2, 1.0, 1e-2).unwrap();
        let back = step_verlet(&fwd, &p2, 1.0, -1e-2).unwrap();
        for (a, b) in back.positions().iter().zip(s.positions()) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in back.velocities().iter().zip(s.velocities()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn step_collision_is_reported() {
        let free = PotentialSpec::Free;
        let s = SystemState::new(0.0, vec![v(0., 0., 0.), v(1., 0., 0.)], vec![v(0.5, 0., 0.), v(-0.5, 0., 0.)])
            .unwrap();
        // Both particles land on x = 0.5.
        let err = step_verlet(&s, &free, 1.0, 1.0).unwrap_err();
        assert_eq!(err, Error::StepCollision { i: 0, j: 1 });
        assert!(err.is_collision());
        let err = integrate(&s, &free, 1.0, 2.0, 1.0, 1).unwrap_err();
        assert!(matches!(err, Error::StepFailed { t, .. } if t == 0.0));
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(1.0, 0.01, 10).unwrap(), 100);
        assert!(step_count(1.0, 0.03, 1).is_err());
        assert!(step_count(1.0, 0.01, 7).is_err());
        assert!(step_count(-1.0, 0.01, 1).is_err());
    }

    #[test]
    fn default_step_respects_stride() {
        let (h, steps) = default_step(1.0, 0.05, 0.5, 1e-3, 10);
        assert_eq!(steps, 1000);
        assert_eq!(h, 1e-3);
        let (h, steps) = default_step(1.0, 0.001, 1.0, 1e-3, 7);
        assert_eq!(steps % 7, 0);
        assert!(h <= 0.1 * 0.001 + 1e-18);
        assert_eq!(step_count(1.0, h, 7).unwrap(), steps);
    }
}
