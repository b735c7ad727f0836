//! Weak-form diagnostics: smooth compactly supported test functions, the
//! interaction term `I^(N)(t, φ) = (1/N) Σ φ(t, x_i) a_i` and its time
//! integral, residuals of the per-`N` continuity and momentum identities,
//! and residuals of the limit equations evaluated on coarse-grained fields.

use rayon::prelude::*;

use crate::dynamics::{accelerations, Trajectory};
use crate::error::{Error, Result};
use crate::fields::CoarseFields;
use crate::potential::PotentialSpec;
use crate::quadrature::trapezoid_weights;
use crate::Vec3;

/// `φ(t, x) = A b((t - t0)/ρ_t) b(|x - x0|/ρ_x)` with
/// `b(s) = exp(1 - 1/(1 - s²))` on `|s| < 1`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub t0: f64,
    pub x0: Vec3,
    pub rho_t: f64,
    pub rho_x: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpValue {
    pub phi: f64,
    pub dphi_dt: f64,
    pub grad: Vec3,
}

impl BumpValue {
    const ZERO: BumpValue = BumpValue {
        phi: 0.0,
        dphi_dt: 0.0,
        grad: Vec3::new(0.0, 0.0, 0.0),
    };
}

/// `(b(s), b'(s))`.
#[inline]
fn bump1(s: f64) -> (f64, f64) {
    let s2 = s * s;
    if s2 >= 1.0 {
        return (0.0, 0.0);
    }
    let g = 1.0 - s2;
    let b = (1.0 - 1.0 / g).exp();
    (b, -2.0 * s / (g * g) * b)
}

impl TestFunction {
    pub fn new(t0: f64, x0: Vec3, rho_t: f64, rho_x: f64, amplitude: f64) -> Result<Self> {
        if !(rho_t > 0.0 && rho_x > 0.0) {
            return Err(Error::arg("test-function radii must be positive"));
        }
        if !(t0.is_finite() && amplitude.is_finite() && x0.iter().all(|c| c.is_finite())) {
            return Err(Error::arg("test-function parameters must be finite"));
        }
        Ok(Self {
            t0,
            x0,
            rho_t,
            rho_x,
            amplitude,
        })
    }

    /// `sup |φ|`.
    pub fn sup_abs(&self) -> f64 {
        self.amplitude.abs()
    }

    /// Support `{|t - t0| < ρ_t}` must lie in `(0, T)`.
    pub fn check_time_support(&self, t_end: f64) -> Result<()> {
        if self.t0 - self.rho_t < 0.0 || self.t0 + self.rho_t > t_end {
            return Err(Error::arg(format!(
                "time support ({}, {}) not inside (0, {t_end})",
                self.t0 - self.rho_t,
                self.t0 + self.rho_t
            )));
        }
        Ok(())
    }

    /// Spatial support ball must lie in the box `[lo, hi]`.
    pub fn check_space_support(&self, lo: &Vec3, hi: &Vec3) -> Result<()> {
        for a in 0..3 {
            if self.x0[a] - self.rho_x < lo[a] || self.x0[a] + self.rho_x > hi[a] {
                return Err(Error::arg(format!(
                    "spatial support around {:?} with radius {} leaves the grid box",
                    self.x0.as_slice(),
                    self.rho_x
                )));
            }
        }
        Ok(())
    }
}

pub fn eval_bump(tf: &TestFunction, t: f64, x: &Vec3) -> BumpValue {
    let (bt, dbt) = bump1((t - tf.t0) / tf.rho_t);
    if bt == 0.0 {
        return BumpValue::ZERO;
    }
    let d = x - tf.x0;
    let r = d.norm();
    let (bx, dbx) = bump1(r / tf.rho_x);
    if bx == 0.0 {
        return BumpValue::ZERO;
    }
    let a = tf.amplitude;
    let grad = if r > 0.0 { d * (a * bt * dbx / (tf.rho_x * r)) } else { Vec3::zeros() };
    BumpValue {
        phi: a * bt * bx,
        dphi_dt: a * dbt / tf.rho_t * bx,
        grad,
    }
}

/// `(1/N) Σ φ(t, x_i) a_i` from precomputed accelerations.
fn interaction_from(tf: &TestFunction, t: f64, positions: &[Vec3], acc: &[Vec3]) -> Vec3 {
    let mut s = Vec3::zeros();
    for (x, a) in positions.iter().zip(acc) {
        let phi = eval_bump(tf, t, x).phi;
        if phi != 0.0 {
            s += a * phi;
        }
    }
    s / positions.len() as f64
}

/// `I^(N)(t, φ) = (1/N) Σ φ(t, x_i) a_i` at the state's time.
pub fn interaction_term(
    state: &crate::dynamics::SystemState,
    potential: &PotentialSpec,
    sigma: f64,
    tf: &TestFunction,
) -> Result<Vec3> {
    let acc = accelerations(state, potential, sigma)?;
    Ok(interaction_from(tf, state.t(), state.positions(), &acc))
}

/// Accelerations at every sample of a trajectory.
pub fn trajectory_accelerations(traj: &Trajectory, potential: &PotentialSpec, sigma: f64) -> Result<Vec<Vec<Vec3>>> {
    traj.samples()
        .iter()
        .map(|s| accelerations(s, potential, sigma))
        .collect()
}

/// Per-sample integrands of the discrete identities for one test function.
struct Integrands {
    continuity: Vec<f64>,
    momentum: Vec<Vec3>,
    interaction: Vec<Vec3>,
}

fn integrands(traj: &Trajectory, acc: Option<&[Vec<Vec3>]>, tf: &TestFunction) -> Integrands {
    let samples = traj.samples();
    let mut out = Integrands {
        continuity: Vec::with_capacity(samples.len()),
        momentum: Vec::with_capacity(samples.len()),
        interaction: Vec::with_capacity(samples.len()),
    };
    for (k, s) in samples.iter().enumerate() {
        let n = s.n() as f64;
        let (mut c, mut m, mut i) = (0.0, Vec3::zeros(), Vec3::zeros());
        for (p, (x, u)) in s.positions().iter().zip(s.velocities()).enumerate() {
            let b = eval_bump(tf, s.t(), x);
            if b.phi == 0.0 && b.dphi_dt == 0.0 {
                continue;
            }
            let flux = b.grad.dot(u);
            c += b.dphi_dt + flux;
            m += u * (b.dphi_dt + flux);
            if let Some(acc) = acc {
                i += acc[k][p] * b.phi;
            }
        }
        out.continuity.push(c / n);
        out.momentum.push(m / n);
        out.interaction.push(i / n);
    }
    out
}

fn trapz_vec(w: &[f64], values: &[Vec3]) -> Vec3 {
    w.iter().zip(values).fold(Vec3::zeros(), |acc, (wk, v)| acc + v * *wk)
}

fn trapz(w: &[f64], values: &[f64]) -> f64 {
    w.iter().zip(values).map(|(a, b)| a * b).sum()
}

/// `𝔍^(N)(φ) = ∫_0^T I^(N)(t, φ) dt`, trapezoid over samples.
pub fn interaction_functional(
    traj: &Trajectory,
    potential: &PotentialSpec,
    sigma: f64,
    tf: &TestFunction,
) -> Result<Vec3> {
    tf.check_time_support(traj.t_end())?;
    let acc = trajectory_accelerations(traj, potential, sigma)?;
    let g = integrands(traj, Some(&acc), tf);
    Ok(trapz_vec(&trapezoid_weights(&traj.times()), &g.interaction))
}

/// Trapezoid in `t` of `(1/N) Σ [∂_tφ + ∇φ·u_i]`. The exact integral is 0, so
/// the value is discretization error.
pub fn discrete_continuity_residual(traj: &Trajectory, tf: &TestFunction) -> Result<f64> {
    tf.check_time_support(traj.t_end())?;
    let g = integrands(traj, None, tf);
    Ok(trapz(&trapezoid_weights(&traj.times()), &g.continuity))
}

/// Trapezoid in `t` of `(1/N) Σ [∂_tφ u_i + (∇φ·u_i) u_i]` plus `𝔍^(N)(φ)`.
pub fn discrete_momentum_residual(
    traj: &Trajectory,
    potential: &PotentialSpec,
    sigma: f64,
    tf: &TestFunction,
) -> Result<Vec3> {
    tf.check_time_support(traj.t_end())?;
    let acc = trajectory_accelerations(traj, potential, sigma)?;
    let g = integrands(traj, Some(&acc), tf);
    let w = trapezoid_weights(&traj.times());
    Ok(trapz_vec(&w, &g.momentum) + trapz_vec(&w, &g.interaction))
}

fn check_field_support(fields: &CoarseFields, tf: &TestFunction) -> Result<()> {
    let grid = fields.grid();
    let edges = grid.time_edges();
    if tf.t0 - tf.rho_t < edges[0] || tf.t0 + tf.rho_t > edges[edges.len() - 1] {
        return Err(Error::arg("test-function time support leaves the grid's time range"));
    }
    tf.check_space_support(&grid.lo(), &grid.hi())
}

/// Midpoint sum over occupied cells of `[∂_tφ + ∇φ·u] mass Δt` at cell and
/// time-bin centers.
pub fn limit_continuity_residual(fields: &CoarseFields, tf: &TestFunction) -> Result<f64> {
    check_field_support(fields, tf)?;
    let grid = fields.grid();
    let mut total = 0.0;
    for k in 0..grid.time_bins() {
        let (tc, dt) = (grid.time_center(k), grid.time_width(k));
        for c in fields.occupied(k) {
            let b = eval_bump(tf, tc, &grid.cell_center(c));
            total += (b.dphi_dt + b.grad.dot(&fields.mean_velocity(k, c))) * fields.mass(k, c) * dt;
        }
    }
    Ok(total)
}

/// Midpoint sum of `[∂_tφ u + (∇φ·u) u + ∇φ·S] mass Δt`, minus `interaction`.
pub fn limit_momentum_residual(fields: &CoarseFields, tf: &TestFunction, interaction: &Vec3) -> Result<Vec3> {
    check_field_support(fields, tf)?;
    let grid = fields.grid();
    let mut total = Vec3::zeros();
    for k in 0..grid.time_bins() {
        let (tc, dt) = (grid.time_center(k), grid.time_width(k));
        for c in fields.occupied(k) {
            let b = eval_bump(tf, tc, &grid.cell_center(c));
            let u = fields.mean_velocity(k, c);
            let stress = fields.fluct_tensor(k, c).transpose() * b.grad;
            total += (u * b.dphi_dt + u * b.grad.dot(&u) + stress) * (fields.mass(k, c) * dt);
        }
    }
    Ok(total - interaction)
}

/// Least-squares slope of `ln sup|I|` against `ln N`.
pub fn interaction_decay(sweep: &[(f64, f64)]) -> Result<f64> {
    if sweep.len() < 3 {
        return Err(Error::arg("decay fit needs at least three sweep points"));
    }
    if sweep.iter().any(|&(n, s)| !(n > 0.0) || !(s > 0.0)) {
        return Err(Error::arg("decay fit needs positive N and positive sup|I|"));
    }
    let pts: Vec<(f64, f64)> = sweep.iter().map(|&(n, s)| (n.ln(), s.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("decay fit needs at least two distinct N"));
    }
    Ok(sxy / sxx)
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

pub const DEFAULT_TEST_FUNCTIONS: usize = 8;
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.25;

/// `count` bumps with centers on the Halton sequence (bases 2, 3, 5, 7)
/// inside `[0, T] × [lo, hi]`, time radius `fraction·T` and spatial radius
/// `fraction` times the smallest box extent. Supports fit inside the box.
pub fn default_test_functions(
    t_end: f64,
    lo: &Vec3,
    hi: &Vec3,
    count: usize,
    fraction: f64,
    amplitude: f64,
) -> Result<Vec<TestFunction>> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::arg("radius fraction must lie in (0, 1/2)"));
    }
    let ext = hi - lo;
    let rho_t = fraction * t_end;
    let rho_x = fraction * ext.min();
    (1..=count)
        .map(|i| {
            let t0 = rho_t + halton(i, 2) * (t_end - 2.0 * rho_t);
            let mut x0 = Vec3::zeros();
            for (a, base) in [3, 5, 7].into_iter().enumerate() {
                x0[a] = lo[a] + rho_x + halton(i, base) * (ext[a] - 2.0 * rho_x);
            }
            TestFunction::new(t0, x0, rho_t, rho_x, amplitude)
        })
        .collect()
}

/// How the limit momentum residual accounts for the interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitInteraction {
    /// Interaction taken as 0 (the vanishing-interaction regime).
    Zero,
    /// Subtract the trajectory's own `𝔍^(N)(φ)`.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub tf: TestFunction,
    pub discrete_continuity: f64,
    pub discrete_momentum: Vec3,
    pub interaction: Vec3,
    pub sup_interaction: f64,
    /// `None` when no fields were supplied.
    pub limit_continuity: Option<f64>,
    pub limit_momentum: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub h: f64,
    pub stride: usize,
    pub grid: Option<String>,
    /// One entry per test function, in input order; invalid supports carry
    /// the error instead of a row.
    pub rows: Vec<std::result::Result<ResidualRow, String>>,
}

/// Evaluates every residual for every test function from one set of
/// per-sample accelerations.
pub fn evaluate_residuals(
    traj: &Trajectory,
    acc: &[Vec<Vec3>],
    fields: Option<&CoarseFields>,
    tfs: &[TestFunction],
    mode: LimitInteraction,
) -> Result<ResidualReport> {
    if acc.len() != traj.samples().len() {
        return Err(Error::arg("one acceleration set per sample required"));
    }
    let w = trapezoid_weights(&traj.times());
    let rows = tfs
        .par_iter()
        .map(|tf| -> std::result::Result<ResidualRow, String> {
            tf.check_time_support(traj.t_end()).map_err(|e| e.to_string())?;
            if let Some(f) = fields {
                check_field_support(f, tf).map_err(|e| e.to_string())?;
            }
            let g = integrands(traj, Some(acc), tf);
            let interaction = trapz_vec(&w, &g.interaction);
            let sup_interaction = g.interaction.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let (limit_continuity, limit_momentum) = match fields {
                Some(f) => {
                    let inter = match mode {
                        LimitInteraction::Zero => Vec3::zeros(),
                        LimitInteraction::Estimated => interaction,
                    };
                    (
                        Some(limit_continuity_residual(f, tf).map_err(|e| e.to_string())?),
                        Some(limit_momentum_residual(f, tf, &inter).map_err(|e| e.to_string())?),
                    )
                }
                None => (None, None),
            };
            Ok(ResidualRow {
                tf: *tf,
                discrete_continuity: trapz(&w, &g.continuity),
                discrete_momentum: trapz_vec(&w, &g.momentum) + interaction,
                interaction,
                sup_interaction,
                limit_continuity,
                limit_momentum,
            })
        })
        .collect();
    Ok(ResidualReport {
        h: traj.h(),
        stride: traj.stride(),
        grid: fields.map(|f| {
            let g = f.grid();
            format!(
                "{}x{}x{}x{} [{:?}, {:?}]",
                g.time_bins(),
                g.bins()[0],
                g.bins()[1],
                g.bins()[2],
                g.lo().as_slice(),
                g.hi().as_slice()
            )
        }),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemState;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn tf() -> TestFunction {
        TestFunction::new(0.5, v(0.1, -0.2, 0.3), 0.25, 0.7, 2.0).unwrap()
    }

    #[test]
    fn bump_center_and_outside() {
        let f = tf();
        let b = eval_bump(&f, f.t0, &f.x0);
        assert_eq!(b.phi, 2.0);
        assert_eq!(b.dphi_dt, 0.0);
        assert_eq!(b.grad, Vec3::zeros());
        let out = eval_bump(&f, 0.9, &f.x0);
        assert_eq!(out, BumpValue::ZERO);
        let out = eval_bump(&f, 0.5, &v(5., 0., 0.));
        assert_eq!(out, BumpValue::ZERO);
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let f = tf();
        let h = 1e-5;
        for &(t, x) in &[(0.42, v(0.3, 0.1, 0.2)), (0.61, v(-0.2, -0.4, 0.5)), (0.5, v(0.1, 0.2, 0.3))] {
            let b = eval_bump(&f, t, &x);
            let dt = (eval_bump(&f, t + h, &x).phi - eval_bump(&f, t - h, &x).phi) / (2.0 * h);
            assert!((b.dphi_dt - dt).abs() <= 1e-6 * b.dphi_dt.abs().max(1e-3), "{} {}", b.dphi_dt, dt);
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (eval_bump(&f, t, &(x + e)).phi - eval_bump(&f, t, &(x - e)).phi) / (2.0 * h);
                assert!((b.grad[a] - fd).abs() <= 1e-6 * b.grad[a].abs().max(1e-3), "{} {}", b.grad[a], fd);
            }
        }
    }

    #[test]
    fn interaction_examples() {
        let p2 = PotentialSpec::power_law(2.0).unwrap();
        let s = SystemState::new(0.5, vec![v(0., 0., 0.), v(2., 0., 0.)], vec![Vec3::zeros(); 2]).unwrap();
        // φ = 1 at x1, 0 at x2.
        let f = TestFunction::new(0.5, v(0., 0., 0.), 0.25, 1.0, 1.0).unwrap();
        let i = interaction_term(&s, &p2, 1.0, &f).unwrap();
        assert_eq!(i, v(-0.125, 0., 0.));
        assert_eq!(interaction_term(&s, &PotentialSpec::Free, 1.0, &f).unwrap(), Vec3::zeros());
        // φ equal on both particles: Newton's third law.
        let wide = TestFunction::new(0.5, v(1., 0., 0.), 0.25, 10.0, 1.0).unwrap();
        assert_eq!(interaction_term(&s, &p2, 1.0, &wide).unwrap(), Vec3::zeros());
    }

    #[test]
    fn decay_fit() {
        let pts: Vec<(f64, f64)> = [64f64, 128., 512., 4096.].iter().map(|&n| (n, n.powf(-2. / 3.))).collect();
        assert!((interaction_decay(&pts).unwrap() + 2. / 3.).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [1., 2., 3.].iter().map(|&n| (n, 5.0)).collect();
        assert!(interaction_decay(&flat).unwrap().abs() < 1e-15);
        assert!(interaction_decay(&[(1., 1.), (2., 0.), (3., 1.)]).is_err());
        assert!(interaction_decay(&[(1., 1.), (2., 1.)]).is_err());
    }

    #[test]
    fn default_set_fits_box() {
        let (lo, hi) = (v(-1., -1., -1.), v(1., 2., 1.));
        let tfs = default_test_functions(1.0, &lo, &hi, 8, 0.25, 1.0).unwrap();
        assert_eq!(tfs.len(), 8);
        for f in &tfs {
            f.check_time_support(1.0).unwrap();
            f.check_space_support(&lo, &hi).unwrap();
            assert_eq!(f.rho_x, 0.5);
        }
        assert_ne!(tfs[0].x0, tfs[1].x0);
    }

    #[test]
    fn halton_values() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(2, 3) - 2.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn support_violation() {
        let f = TestFunction::new(0.1, Vec3::zeros(), 0.25, 1.0, 1.0).unwrap();
        assert!(f.check_time_support(1.0).is_err());
        assert!(TestFunction::new(0.5, Vec3::zeros(), 0.0, 1.0, 1.0).is_err());
    }
}
