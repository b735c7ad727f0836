//! Empirical measures `M_t^(N) = (1/N) Σ δ_(x_i(t), u_i(t))` and the
//! space-time measure `M^(N)(dt,dx,dv) = M_t^(N) dt`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{SystemState, Trajectory};
use crate::error::{Error, Result};
use crate::quadrature::{trapezoid_richardson, trapezoid_weights, QuadratureEstimate};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Position,
    Velocity,
}

/// Point measure with weight `1/N` at each phase-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSnapshot {
    t: f64,
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
}

impl EmpiricalSnapshot {
    pub fn new(t: f64, positions: Vec<Vec3>, velocities: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() || positions.len() != velocities.len() {
            return Err(Error::arg("snapshot needs equally many positions and velocities, at least one"));
        }
        Ok(Self {
            t,
            positions,
            velocities,
        })
    }

    pub fn from_state(state: &SystemState) -> Self {
        Self {
            t: state.t(),
            positions: state.positions().to_vec(),
            velocities: state.velocities().to_vec(),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Integral of the constant 1.
    pub fn total_mass(&self) -> f64 {
        self.positions.iter().map(|_| self.weight()).sum()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    fn component(&self, which: Component) -> &[Vec3] {
        match which {
            Component::Position => &self.positions,
            Component::Velocity => &self.velocities,
        }
    }
}

fn pow_norm(v: &Vec3, q: f64) -> f64 {
    if q == 0.0 {
        1.0
    } else if q == 2.0 {
        v.norm_squared()
    } else {
        v.norm().powf(q)
    }
}

/// `(1/N) Σ |·_i|^q`.
pub fn moment(snap: &EmpiricalSnapshot, q: f64, which: Component) -> f64 {
    let s: f64 = snap.component(which).iter().map(|v| pow_norm(v, q)).sum();
    s / snap.n() as f64
}

/// `(1/N) Σ_{|·_i|^q > R} |·_i|^q`.
pub fn tail_mass(snap: &EmpiricalSnapshot, q: f64, r: f64, which: Component) -> f64 {
    let s: f64 = snap
        .component(which)
        .iter()
        .map(|v| pow_norm(v, q))
        .filter(|&f| f > r)
        .sum();
    s / snap.n() as f64
}

/// Anything with a characteristic function on `R³ × R³`.
pub trait Characteristic: Sync {
    fn char_fn(&self, y: &Vec3, w: &Vec3) -> Complex64;

    /// Values over a whole grid; implementors may batch the work.
    fn char_values(&self, grid: &[Frequency]) -> Vec<Complex64> {
        grid.par_iter().map(|(y, w)| self.char_fn(y, w)).collect()
    }
}

/// `(1/N) Σ exp(i (y·x_j + w·u_j))`.
pub fn char_fn(snap: &EmpiricalSnapshot, y: &Vec3, w: &Vec3) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, u) in snap.positions.iter().zip(&snap.velocities) {
        let (s, c) = (y.dot(x) + w.dot(u)).sin_cos();
        re += c;
        im += s;
    }
    let n = snap.n() as f64;
    Complex64::new(re / n, im / n)
}

impl Characteristic for EmpiricalSnapshot {
    fn char_fn(&self, y: &Vec3, w: &Vec3) -> Complex64 {
        char_fn(self, y, w)
    }

    fn char_values(&self, grid: &[Frequency]) -> Vec<Complex64> {
        match IntegerGrid::new(grid) {
            Some(ig) => {
                let n = self.n() as f64;
                ig.sums(&self.positions, &self.velocities)
                    .into_iter()
                    .map(|z| z / n)
                    .collect()
            }
            None => grid.par_iter().map(|(y, w)| char_fn(self, y, w)).collect(),
        }
    }
}

/// Largest frequency component handled by the table-based evaluation.
const TABLE_MAX_FREQ: i32 = 4;
/// Points per block of the table-based evaluation.
const TABLE_BLOCK: usize = 64;

/// A grid whose frequencies all have integer components of modulus at most
/// `m`. Then `exp(i y·x) = Π_a exp(i x_a)^{y_a}`, so each point needs only
/// `6(2m+1)` trigonometric evaluations and one table lookup per frequency.
struct IntegerGrid {
    m: i32,
    /// `(index of y, index of w)` into the per-point tables.
    idx: Vec<(usize, usize)>,
}

impl IntegerGrid {
    fn new(grid: &[Frequency]) -> Option<Self> {
        let comps = |f: &Frequency| [f.0[0], f.0[1], f.0[2], f.1[0], f.1[1], f.1[2]];
        let mut m = 0;
        for f in grid {
            for c in comps(f) {
                if c.fract() != 0.0 || c.abs() > TABLE_MAX_FREQ as f64 {
                    return None;
                }
                m = m.max(c.abs() as i32);
            }
        }
        let width = (2 * m + 1) as usize;
        let flat = |a: f64, b: f64, c: f64| {
            let k = |v: f64| (v as i32 + m) as usize;
            (k(a) * width + k(b)) * width + k(c)
        };
        let idx = grid
            .iter()
            .map(|(y, w)| (flat(y[0], y[1], y[2]), flat(w[0], w[1], w[2])))
            .collect();
        Some(Self { m, idx })
    }

    /// `exp(i k·v)` for every integer `k` in the cube `[-m, m]³`.
    fn table(&self, v: &Vec3) -> Vec<Complex64> {
        let width = (2 * self.m + 1) as usize;
        let axis: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                (-self.m..=self.m)
                    .map(|k| {
                        let (s, c) = (f64::from(k) * v[a]).sin_cos();
                        Complex64::new(c, s)
                    })
                    .collect()
            })
            .collect();
        let mut t = Vec::with_capacity(width * width * width);
        for e0 in &axis[0] {
            for e1 in &axis[1] {
                let e01 = e0 * e1;
                for e2 in &axis[2] {
                    t.push(e01 * e2);
                }
            }
        }
        t
    }

    /// `Σ_j exp(i (y·x_j + w·u_j))` per frequency, accumulated over `j`
    /// ascending irrespective of threading.
    fn sums(&self, positions: &[Vec3], velocities: &[Vec3]) -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.idx.len()];
        for (xs, us) in positions.chunks(TABLE_BLOCK).zip(velocities.chunks(TABLE_BLOCK)) {
            let tables: Vec<(Vec<Complex64>, Vec<Complex64>)> = xs
                .par_iter()
                .zip(us)
                .map(|(x, u)| (self.table(x), self.table(u)))
                .collect();
            acc.par_iter_mut().zip(&self.idx).for_each(|(a, &(iy, iw))| {
                let mut z = *a;
                for (tx, tu) in &tables {
                    z += tx[iy] * tu[iw];
                }
                *a = z;
            });
        }
        acc
    }
}

/// A frequency pair `(y, w)`.
pub type Frequency = (Vec3, Vec3);

/// `{-2,…,2}³ × {-2,…,2}³`, every 4th point in lexicographic order
/// (3907 points).
pub fn default_char_grid() -> Vec<Frequency> {
    let mut all = Vec::with_capacity(15625);
    let r = -2..=2;
    for a in r.clone() {
        for b in r.clone() {
            for c in r.clone() {
                for d in r.clone() {
                    for e in r.clone() {
                        for f in r.clone() {
                            all.push((
                                Vec3::new(a as f64, b as f64, c as f64),
                                Vec3::new(d as f64, e as f64, f as f64),
                            ));
                        }
                    }
                }
            }
        }
    }
    let step = all.len().div_ceil(4096);
    all.into_iter().step_by(step).collect()
}

/// Values of a characteristic function over a grid.
pub fn char_values<C: Characteristic + Sync>(m: &C, grid: &[Frequency]) -> Vec<Complex64> {
    m.char_values(grid)
}

/// `max` over the grid of `|φ_a - φ_b|`.
pub fn char_distance<A, B>(a: &A, b: &B, grid: &[Frequency]) -> Result<f64>
where
    A: Characteristic + Sync,
    B: Characteristic + Sync,
{
    if grid.is_empty() {
        return Err(Error::arg("characteristic grid is empty"));
    }
    Ok(char_values_distance(&char_values(a, grid), &char_values(b, grid)))
}

/// Distance between precomputed value sets on the same grid.
pub fn char_values_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Chebyshev bound on the `M^(N)` mass outside radius `R`:
/// `(2BT + T³/3) / R²`.
pub fn tightness_bound(b: f64, t_end: f64, r: f64) -> f64 {
    (2.0 * b * t_end + t_end.powi(3) / 3.0) / (r * r)
}

/// Snapshots with trapezoid weights for `dt` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeMeasure {
    snapshots: Vec<EmpiricalSnapshot>,
    weights: Vec<f64>,
    t_end: f64,
}

impl SpaceTimeMeasure {
    /// A single snapshot is read as constant in time over `[0, T]`.
    pub fn new(snapshots: Vec<EmpiricalSnapshot>, t_end: f64) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::arg("space-time measure needs at least one snapshot"));
        }
        if !(t_end > 0.0) {
            return Err(Error::arg("horizon T must be positive"));
        }
        let weights = if snapshots.len() == 1 {
            vec![t_end]
        } else {
            let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::arg("snapshot times must increase"));
            }
            trapezoid_weights(&times)
        };
        Ok(Self {
            snapshots,
            weights,
            t_end,
        })
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let snaps = traj.samples().iter().map(EmpiricalSnapshot::from_state).collect();
        Self::new(snaps, traj.t_end()).expect("trajectory samples are increasing")
    }

    pub fn snapshots(&self) -> &[EmpiricalSnapshot] {
        &self.snapshots
    }

    /// `dt` quadrature weights; they sum to `T`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    fn integrate<F: Fn(&EmpiricalSnapshot) -> f64>(&self, f: F) -> f64 {
        self.snapshots.iter().zip(&self.weights).map(|(s, w)| w * f(s)).sum()
    }
}

impl Characteristic for SpaceTimeMeasure {
    /// Characteristic function of the probability measure `M^(N)/T`
    /// restricted to `(x, v)`.
    fn char_fn(&self, y: &Vec3, w: &Vec3) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (s, wt) in self.snapshots.iter().zip(&self.weights) {
            acc += char_fn(s, y, w) * *wt;
        }
        acc / self.t_end
    }

    fn char_values(&self, grid: &[Frequency]) -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (s, wt) in self.snapshots.iter().zip(&self.weights) {
            for (a, v) in acc.iter_mut().zip(s.char_values(grid)) {
                *a += v * *wt;
            }
        }
        acc.into_iter().map(|a| a / self.t_end).collect()
    }
}

/// `∫ (1/N) Σ |u_i(t)|^q dt`, trapezoid in time.
pub fn spacetime_moment(m: &SpaceTimeMeasure, q: f64) -> f64 {
    m.integrate(|s| moment(s, q, Component::Velocity))
}

/// The same integral alongside its value at doubled sampling stride.
pub fn spacetime_moment_estimate(m: &SpaceTimeMeasure, q: f64) -> Option<QuadratureEstimate> {
    let times: Vec<f64> = m.snapshots.iter().map(|s| s.t).collect();
    let values: Vec<f64> = m.snapshots.iter().map(|s| moment(s, q, Component::Velocity)).collect();
    trapezoid_richardson(&times, &values)
}

/// Measured `M^(N)` mass of `{ t² + |x|² + |v|² > R² }`.
pub fn outside_mass(m: &SpaceTimeMeasure, r: f64) -> f64 {
    let r2 = r * r;
    m.integrate(|s| {
        let t2 = s.t * s.t;
        let count = s
            .positions
            .iter()
            .zip(&s.velocities)
            .filter(|(x, u)| t2 + x.norm_squared() + u.norm_squared() > r2)
            .count();
        count as f64 / s.n() as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_path_matches_direct_sum() {
        let pts: Vec<Vec3> = (0..150).map(|k| Vec3::new((k as f64 * 0.37).sin(), 0.01 * k as f64, -0.3)).collect();
        let vel: Vec<Vec3> = (0..150).map(|k| Vec3::new(1.0, (k as f64).cos(), 0.2 * k as f64)).collect();
        let snap = EmpiricalSnapshot::new(0.0, pts, vel).unwrap();
        let grid = default_char_grid();
        let fast = snap.char_values(&grid);
        for (z, (y, w)) in fast.iter().zip(&grid) {
            assert!((z - char_fn(&snap, y, w)).norm() < 1e-13);
        }
        // Non-integer frequencies take the direct path.
        let odd = vec![(Vec3::new(0.5, 0.0, 0.0), Vec3::zeros())];
        assert_eq!(snap.char_values(&odd)[0], char_fn(&snap, &odd[0].0, &odd[0].1));
    }
    use std::f64::consts::PI;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn snap(vel: &[Vec3]) -> EmpiricalSnapshot {
        let pos = (0..vel.len()).map(|i| v(i as f64, 0., 0.)).collect();
        EmpiricalSnapshot::new(0.0, pos, vel.to_vec()).unwrap()
    }

    #[test]
    fn moment_examples() {
        let s = snap(&[v(1., 0., 0.), v(0., -1., 0.)]);
        assert_eq!(moment(&s, 2.0, Component::Velocity), 1.0);
        assert_eq!(moment(&s, 0.0, Component::Velocity), 1.0);
        let s = snap(&[v(1., 0., 0.), v(0., 2., 0.), v(0., 0., 3.)]);
        assert!((moment(&s, 2.0, Component::Velocity) - 14.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.total_mass(), 1.0);
    }

    #[test]
    fn tail_examples() {
        let s = snap(&[v(1., 0., 0.), v(0., 3., 0.)]);
        assert_eq!(tail_mass(&s, 2.0, 2.0, Component::Velocity), 4.5);
        assert_eq!(tail_mass(&s, 2.0, 9.0, Component::Velocity), 0.0);
    }

    #[test]
    fn char_fn_examples() {
        let s = EmpiricalSnapshot::new(0.0, vec![v(PI, 0., 0.), v(-PI, 0., 0.)], vec![Vec3::zeros(); 2]).unwrap();
        let z = Vec3::zeros();
        assert_eq!(char_fn(&s, &z, &z), Complex64::new(1.0, 0.0));
        let c = char_fn(&s, &v(1., 0., 0.), &z);
        assert!((c.re + 1.0).abs() < 1e-15 && c.im.abs() < 1e-15);
        let origin = EmpiricalSnapshot::new(0.0, vec![z], vec![z]).unwrap();
        assert_eq!(char_fn(&origin, &v(1., 2., 3.), &v(-1., 0.5, 2.)), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn default_grid_size() {
        let g = default_char_grid();
        assert_eq!(g.len(), 3907);
        assert!(g.len() <= 4096);
        assert_eq!(g[0], (v(-2., -2., -2.), v(-2., -2., -2.)));
    }

    #[test]
    fn char_distance_examples() {
        let a = snap(&[v(0.1, 0., 0.), v(0., 0.3, 0.)]);
        let grid = default_char_grid();
        assert_eq!(char_distance(&a, &a, &grid).unwrap(), 0.0);
        let b = EmpiricalSnapshot::new(0.0, vec![v(5., 5., 5.), v(-3., 1., 0.)], a.velocities().to_vec()).unwrap();
        assert!(char_distance(&a, &b, &grid).unwrap() > 0.0);
        assert!(char_distance(&a, &b, &[]).is_err());
    }

    #[test]
    fn tightness_value() {
        assert!((tightness_bound(1.0, 1.0, 10.0) - 7.0 / 300.0).abs() < 1e-15);
        assert!(tightness_bound(1.0, 1.0, 1e12) < 1e-20);
    }

    #[test]
    fn spacetime_single_and_constant() {
        let s = snap(&[v(1., 0., 0.), v(0., 2., 0.)]);
        let m = SpaceTimeMeasure::new(vec![s.clone()], 2.0).unwrap();
        assert_eq!(spacetime_moment(&m, 2.0), 2.0 * 2.5);
        let snaps: Vec<_> = (0..=4)
            .map(|k| EmpiricalSnapshot::new(k as f64 * 0.25, s.positions().to_vec(), s.velocities().to_vec()).unwrap())
            .collect();
        let m = SpaceTimeMeasure::new(snaps, 1.0).unwrap();
        assert!((spacetime_moment(&m, 2.0) - 2.5).abs() < 1e-15);
        let q = spacetime_moment_estimate(&m, 2.0).unwrap();
        assert!(q.error_estimate.abs() < 1e-15);
        let z = Vec3::zeros();
        assert!((m.char_fn(&z, &z) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
