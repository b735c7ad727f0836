//! Aligned initial configurations and the scaling certificates `(B_N, σ_N)`
//! under which every pairwise distance is nondecreasing on `[0, T]` and
//! every acceleration stays below `B_N`.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::SystemState;
use crate::error::{Error, Result};
use crate::potential::PotentialSpec;
use crate::Vec3;

/// Minimum of `f(i, j)` over unordered pairs `i < j`, with ties resolved to
/// the lexicographically first pair. Rows run in parallel; the reduction is
/// sequential.
pub(crate) fn pair_min<F>(n: usize, f: F) -> (f64, usize, usize)
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in i + 1..n {
                let v = f(i, j);
                if v < best.0 {
                    best = (v, j);
                }
            }
            best
        })
        .collect();
    let mut best = (f64::INFINITY, 0, 0);
    for (i, (v, j)) in rows.into_iter().enumerate() {
        if v < best.0 {
            best = (v, i, j);
        }
    }
    best
}

/// Initial data with cached sup bounds, minimum separation and alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfiguration {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
    x_sup: f64,
    u_sup: f64,
    d_min: f64,
    align_min: f64,
    align_pair: (usize, usize),
}

impl InitialConfiguration {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        // Validates lengths, finiteness and distinctness.
        let state = SystemState::new(0.0, positions, velocities)?;
        let positions = state.positions().to_vec();
        let velocities = state.velocities().to_vec();
        let n = positions.len();
        let x_sup = positions.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let u_sup = velocities.iter().map(|u| u.norm()).fold(0.0, f64::max);
        let (d2, _, _) = pair_min(n, |i, j| (positions[i] - positions[j]).norm_squared());
        let (align_min, i, j) = pair_min(n, |i, j| {
            (positions[i] - positions[j]).dot(&(velocities[i] - velocities[j]))
        });
        Ok(Self {
            positions,
            velocities,
            x_sup,
            u_sup,
            d_min: d2.sqrt(),
            align_min,
            align_pair: (i, j),
        })
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

    /// `X = max_i |x_i(0)|`.
    pub fn x_sup(&self) -> f64 {
        self.x_sup
    }

    /// `U = max_i |u_i(0)|`.
    pub fn u_sup(&self) -> f64 {
        self.u_sup
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    /// `min_{i<j} X_ij·U_ij`.
    pub fn align_min(&self) -> f64 {
        self.align_min
    }

    pub fn align_pair(&self) -> (usize, usize) {
        self.align_pair
    }

    pub fn is_aligned(&self) -> bool {
        self.align_min > 0.0
    }

    pub fn to_state(&self) -> SystemState {
        SystemState::from_parts(0.0, self.positions.clone(), self.velocities.clone())
            .expect("validated at construction")
    }
}

/// Burst: `u_i(0) = λ x_i(0)`.
pub fn gen_burst(positions: &[Vec3], lambda: f64) -> Result<InitialConfiguration> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("burst rate λ must be positive, got {lambda}")));
    }
    let velocities = positions.iter().map(|x| x * lambda).collect();
    InitialConfiguration::new(positions.to_vec(), velocities)
}

/// Positions on the `z = 0` plane with velocities `(α, β, ±γ)`.
/// Pairs with equal signs have `U_ij = 0`, and pairs with differing signs
/// have `X_ij·U_ij = 0` as well, so the result is never aligned; it is
/// returned so that certification can report the failure.
pub fn gen_planar(
    positions_2d: &[[f64; 2]],
    alpha: f64,
    beta: f64,
    gamma: f64,
    signs: &[i8],
) -> Result<InitialConfiguration> {
    if signs.len() != positions_2d.len() {
        return Err(Error::arg("one sign per particle required"));
    }
    if let Some(s) = signs.iter().find(|s| s.abs() != 1) {
        return Err(Error::arg(format!("signs must be ±1, got {s}")));
    }
    let positions = positions_2d.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect();
    let velocities = signs
        .iter()
        .map(|&s| Vec3::new(alpha, beta, f64::from(s) * gamma))
        .collect();
    InitialConfiguration::new(positions, velocities)
}

/// Lifted planar data: `x_i(0) = (a_i, b_i, 0)`, `u_i(0) = (a_i, b_i, c_i)`.
pub fn gen_lifted(ab_pairs: &[[f64; 2]], c: &[f64]) -> Result<InitialConfiguration> {
    if c.len() != ab_pairs.len() {
        return Err(Error::arg("one lift value per particle required"));
    }
    let positions = ab_pairs.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect();
    let velocities = ab_pairs
        .iter()
        .zip(c)
        .map(|(p, &ci)| Vec3::new(p[0], p[1], ci))
        .collect();
    InitialConfiguration::new(positions, velocities)
}

/// Half-width of the box holding every lattice cloud.
pub const LATTICE_BOX_HALF_WIDTH: f64 = 0.5;

/// `N` sites of the cubic lattice with spacing `α N^{-1/3}` nearest to the
/// origin (ties broken lexicographically), each displaced uniformly inside a
/// ball of radius `jitter·spacing`. All points lie in `[-1/2, 1/2]³`; with
/// `jitter = 0` the minimum separation is exactly the spacing.
pub fn gen_lattice_cloud(n: usize, alpha: f64, jitter: f64, seed: u64) -> Result<Vec<Vec3>> {
    if n < 2 {
        return Err(Error::arg("lattice cloud needs N ≥ 2"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("α must be positive, got {alpha}")));
    }
    if !(0.0..0.49).contains(&jitter) {
        return Err(Error::arg(format!("jitter must lie in [0, 0.49), got {jitter}")));
    }
    let spacing = alpha * (n as f64).powf(-1.0 / 3.0);
    let reach = ((3.0 * n as f64 / (4.0 * std::f64::consts::PI)).cbrt().ceil() as i64) + 2;
    let mut sites = Vec::with_capacity((2 * reach as usize + 1).pow(3));
    for i in -reach..=reach {
        for j in -reach..=reach {
            for k in -reach..=reach {
                sites.push((i * i + j * j + k * k, i, j, k));
            }
        }
    }
    sites.sort_unstable();
    sites.truncate(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_shift = jitter * spacing;
    let mut points = Vec::with_capacity(n);
    for &(_, i, j, k) in &sites {
        let mut p = Vec3::new(i as f64, j as f64, k as f64) * spacing;
        if max_shift > 0.0 {
            // Rejection sample the unit ball.
            let dir = loop {
                let d = Vec3::new(
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                );
                if d.norm_squared() <= 1.0 {
                    break d;
                }
            };
            p += dir * max_shift;
        }
        if p.amax() > LATTICE_BOX_HALF_WIDTH {
            return Err(Error::arg(format!(
                "α = {alpha} is infeasible for N = {n}: spacing {spacing} places points outside the unit box"
            )));
        }
        points.push(p);
    }
    Ok(points)
}

/// Planar analogue of [`gen_lattice_cloud`]: the `N` sites of the square
/// lattice with spacing `α N^{-1/2}` nearest to the origin, jittered inside
/// a disc of radius `jitter·spacing`, all within `[-1/2, 1/2]²`.
pub fn gen_lattice_plane(n: usize, alpha: f64, jitter: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n < 2 {
        return Err(Error::arg("lattice needs N ≥ 2"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("α must be positive, got {alpha}")));
    }
    if !(0.0..0.49).contains(&jitter) {
        return Err(Error::arg(format!("jitter must lie in [0, 0.49), got {jitter}")));
    }
    let spacing = alpha / (n as f64).sqrt();
    let reach = ((n as f64 / std::f64::consts::PI).sqrt().ceil() as i64) + 2;
    let mut sites = Vec::with_capacity((2 * reach as usize + 1).pow(2));
    for i in -reach..=reach {
        for j in -reach..=reach {
            sites.push((i * i + j * j, i, j));
        }
    }
    sites.sort_unstable();
    sites.truncate(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_shift = jitter * spacing;
    let mut points = Vec::with_capacity(n);
    for &(_, i, j) in &sites {
        let mut p = [i as f64 * spacing, j as f64 * spacing];
        if max_shift > 0.0 {
            let (dx, dy) = loop {
                let (dx, dy): (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                if dx * dx + dy * dy <= 1.0 {
                    break (dx, dy);
                }
            };
            p[0] += dx * max_shift;
            p[1] += dy * max_shift;
        }
        if p[0].abs().max(p[1].abs()) > LATTICE_BOX_HALF_WIDTH {
            return Err(Error::arg(format!(
                "α = {alpha} is infeasible for N = {n}: spacing {spacing} places points outside the unit square"
            )));
        }
        points.push(p);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingMode {
    /// Largest `B_N` satisfying the pairwise quadratic condition.
    GeneralQuadratic,
    /// `min X_ij·U_ij / (4XT + 6UT² + 2T³)`.
    BurstClosedForm,
}

impl ScalingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScalingMode::GeneralQuadratic => "general-quadratic",
            ScalingMode::BurstClosedForm => "burst-closed-form",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "general-quadratic" => Ok(ScalingMode::GeneralQuadratic),
            "burst-closed-form" => Ok(ScalingMode::BurstClosedForm),
            _ => Err(Error::arg(format!("unknown scaling mode '{s}'"))),
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Left side of the pair condition
/// `X·U - 2T|X|B - 3T²|U|B - 2T³B²`, required to be `≥ 0`.
pub fn b_condition(x_ij: &Vec3, u_ij: &Vec3, t_end: f64, b: f64) -> f64 {
    let t = t_end;
    x_ij.dot(u_ij) - 2.0 * t * x_ij.norm() * b - 3.0 * t * t * u_ij.norm() * b - 2.0 * t * t * t * b * b
}

fn pair_b_condition(ic: &InitialConfiguration, t_end: f64, b: f64) -> (f64, usize, usize) {
    let (x, u) = (&ic.positions, &ic.velocities);
    pair_min(ic.n(), |i, j| b_condition(&(x[i] - x[j]), &(u[i] - u[j]), t_end, b))
}

/// Positive root of `2T³B² + (2T|X| + 3T²|U|)B - X·U = 0`.
fn pair_root(x_ij: &Vec3, u_ij: &Vec3, t_end: f64) -> f64 {
    let t = t_end;
    let c = x_ij.dot(u_ij);
    let b = 2.0 * t * x_ij.norm() + 3.0 * t * t * u_ij.norm();
    2.0 * c / (b + (b * b + 8.0 * t * t * t * c).sqrt())
}

pub fn compute_b_n(ic: &InitialConfiguration, t_end: f64, mode: ScalingMode) -> Result<f64> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::arg(format!("horizon T must be positive, got {t_end}")));
    }
    if !ic.is_aligned() {
        let (i, j) = ic.align_pair;
        return Err(Error::Alignment {
            i,
            j,
            value: ic.align_min,
        });
    }
    let t = t_end;
    match mode {
        ScalingMode::BurstClosedForm => {
            Ok(ic.align_min / (4.0 * ic.x_sup * t + 6.0 * ic.u_sup * t * t + 2.0 * t * t * t))
        }
        ScalingMode::GeneralQuadratic => {
            let (x, u) = (&ic.positions, &ic.velocities);
            let (mut b, _, _) = pair_min(ic.n(), |i, j| pair_root(&(x[i] - x[j]), &(u[i] - u[j]), t));
            // The root is exact up to rounding; step down until the
            // condition holds with ≥ 0 on every pair.
            while pair_b_condition(ic, t, b).0 < 0.0 {
                b = b.next_down();
            }
            Ok(b)
        }
    }
}

/// Per-particle left side of the σ condition,
/// `F_i = -(1/σ) Σ_{j≠i} Φ'(|X_ij|/σ)`, summed in index order.
pub fn sigma_condition_lhs(positions: &[Vec3], sigma: f64, potential: &PotentialSpec) -> Vec<f64> {
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for (j, xj) in positions.iter().enumerate() {
                if j != i {
                    s += potential.scaled_repulsion((positions[i] - xj).norm(), sigma);
                }
            }
            s
        })
        .collect()
}

fn worst_index(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
}

/// Bisection bracket for non-power-law potentials, as multiples of `d_min`.
pub const SIGMA_BRACKET_LOW: f64 = 1e-300;
pub const SIGMA_BISECTION_ITERS: usize = 200;

pub fn compute_sigma_n(ic: &InitialConfiguration, b_n: f64, potential: &PotentialSpec) -> Result<f64> {
    if !(b_n > 0.0 && b_n.is_finite()) {
        return Err(Error::arg(format!("B_N must be positive, got {b_n}")));
    }
    let admissible = |sigma: f64| {
        let lhs = sigma_condition_lhs(&ic.positions, sigma, potential);
        let (i, worst) = worst_index(&lhs);
        (worst < b_n, i, worst)
    };
    let sigma = match potential {
        PotentialSpec::PowerLaw { p } => {
            (b_n / ic.n() as f64).powf(1.0 / (p - 1.0)) * ic.d_min.powf(p / (p - 1.0))
        }
        PotentialSpec::Free => ic.d_min,
        PotentialSpec::Custom(_) => {
            let sigma_max = ic.d_min;
            if admissible(sigma_max).0 {
                sigma_max
            } else {
                let mut lo = SIGMA_BRACKET_LOW * ic.d_min;
                let (ok, i, worst) = admissible(lo);
                if !ok {
                    return Err(Error::NoAdmissibleSigma {
                        sigma_max,
                        detail: format!("at σ = {lo:e} particle {i} has F_i = {worst:e} ≥ B_N = {b_n:e}"),
                    });
                }
                let mut hi = sigma_max;
                for _ in 0..SIGMA_BISECTION_ITERS {
                    let mid = (lo * hi).sqrt();
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if admissible(mid).0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    };
    let (ok, i, worst) = admissible(sigma);
    if !ok {
        return Err(Error::NoAdmissibleSigma {
            sigma_max: ic.d_min,
            detail: format!("candidate σ = {sigma:e} fails at particle {i}: F_i = {worst:e} ≥ B_N = {b_n:e}"),
        });
    }
    Ok(sigma)
}

/// `β = λα² / (4XT + 6UT² + 2T³)`, so that `B_N = β N^{-2/3}` on a burst
/// whose minimum separation is `α N^{-1/3}`.
pub fn lattice_burst_beta(alpha: f64, lambda: f64, x_sup: f64, u_sup: f64, t_end: f64) -> f64 {
    let t = t_end;
    lambda * alpha * alpha / (4.0 * x_sup * t + 6.0 * u_sup * t * t + 2.0 * t * t * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPlan {
    pub t_end: f64,
    pub b_n: f64,
    pub sigma_n: f64,
    pub mode: ScalingMode,
    pub certified: bool,
    pub diagnostics: String,
}

impl ScalingPlan {
    /// Computes `B_N` and `σ_N` and re-verifies every hypothesis.
    pub fn build(
        ic: &InitialConfiguration,
        t_end: f64,
        mode: ScalingMode,
        potential: &PotentialSpec,
    ) -> Result<Self> {
        let b_n = compute_b_n(ic, t_end, mode)?;
        let sigma_n = compute_sigma_n(ic, b_n, potential)?;
        let mut plan = ScalingPlan {
            t_end,
            b_n,
            sigma_n,
            mode,
            certified: false,
            diagnostics: String::new(),
        };
        let report = verify_plan(ic, &plan, potential);
        plan.certified = report.passed();
        plan.diagnostics = report.to_string();
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Worst {
    Pair(usize, usize),
    Index(usize),
    Radii(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Value of the checked quantity at the worst case.
    pub value: f64,
    pub worst: Option<Worst>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub checks: Vec<CheckResult>,
}

impl PlanReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            write!(out, "{} {} value={:e}", c.name, verdict, c.value)?;
            match &c.worst {
                Some(Worst::Pair(i, j)) => write!(out, " pair=({i},{j})")?,
                Some(Worst::Index(i)) => write!(out, " index={i}")?,
                Some(Worst::Radii(a, b)) => write!(out, " radii=({a:e},{b:e})")?,
                None => {}
            }
            out.push('\n');
        }
        f.write_str(out.trim_end())
    }
}

pub const CHECK_ALIGNMENT: &str = "alignment";
pub const CHECK_B_N: &str = "b_n_condition";
pub const CHECK_SIGMA_N: &str = "sigma_n_condition";
pub const CHECK_MONOTONE: &str = "repulsion_monotone";

/// Brute-force re-check of every hypothesis behind the separation bound for
/// this configuration and plan. Never errors; failures are in the report.
pub fn verify_plan(ic: &InitialConfiguration, plan: &ScalingPlan, potential: &PotentialSpec) -> PlanReport {
    let mut checks = Vec::with_capacity(4);
    let (i, j) = ic.align_pair;
    checks.push(CheckResult {
        name: CHECK_ALIGNMENT,
        passed: ic.align_min > 0.0,
        value: ic.align_min,
        worst: Some(Worst::Pair(i, j)),
    });

    let (cond, i, j) = pair_b_condition(ic, plan.t_end, plan.b_n);
    checks.push(CheckResult {
        name: CHECK_B_N,
        passed: plan.b_n > 0.0 && cond >= 0.0,
        value: cond,
        worst: Some(Worst::Pair(i, j)),
    });

    let lhs = sigma_condition_lhs(&ic.positions, plan.sigma_n, potential);
    let (i, worst) = worst_index(&lhs);
    checks.push(CheckResult {
        name: CHECK_SIGMA_N,
        passed: plan.sigma_n > 0.0 && worst < plan.b_n,
        value: worst,
        worst: Some(Worst::Index(i)),
    });

    // Distances only grow along certified motion; cover up to the position
    // bound on both particles.
    let t = plan.t_end;
    let reach = 2.0 * (ic.x_sup + ic.u_sup * t + plan.b_n * t * t);
    let r_lo = ic.d_min / plan.sigma_n;
    let r_hi = reach.max(ic.d_min) / plan.sigma_n;
    let monotone = potential.check_repulsion_monotone(r_lo, r_hi, 512);
    checks.push(CheckResult {
        name: CHECK_MONOTONE,
        passed: monotone.is_ok(),
        value: r_hi,
        worst: monotone.err().map(|(a, b)| Worst::Radii(a, b)),
    });
    PlanReport { checks }
}
