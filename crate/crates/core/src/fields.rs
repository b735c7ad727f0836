//! Histogram coarse-graining of a trajectory onto a space-time grid.
//!
//! Within each (time bin, space cell) the samples falling there define a
//! conditional velocity distribution; its mass, mean (the barycentric
//! velocity) and covariance (the fluctuation tensor) are stored. Empty cells
//! carry zero velocity and zero tensor.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::measures::{moment, Component, EmpiricalSnapshot};
use crate::{Mat3, Vec3};

pub const DEFAULT_TIME_BINS: usize = 16;
pub const DEFAULT_SPACE_BINS: usize = 24;
pub const DEFAULT_INFLATION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    time_edges: Vec<f64>,
    lo: Vec3,
    hi: Vec3,
    bins: [usize; 3],
}

impl GridSpec {
    pub fn new(time_edges: Vec<f64>, lo: Vec3, hi: Vec3, bins: [usize; 3]) -> Result<Self> {
        if time_edges.len() < 2 || time_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("time edges must be strictly increasing, at least two"));
        }
        if (0..3).any(|a| !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite()) {
            return Err(Error::arg("grid box must satisfy lo < hi on every axis"));
        }
        if bins.contains(&0) {
            return Err(Error::arg("grid needs at least one cell per axis"));
        }
        Ok(Self {
            time_edges,
            lo,
            hi,
            bins,
        })
    }

    /// Uniform time bins on `[0, T]` and uniform cells on `[lo, hi]`.
    pub fn uniform(t_end: f64, time_bins: usize, lo: Vec3, hi: Vec3, space_bins: [usize; 3]) -> Result<Self> {
        if time_bins == 0 || !(t_end > 0.0) {
            return Err(Error::arg("need T > 0 and at least one time bin"));
        }
        let mut edges: Vec<f64> = (0..=time_bins).map(|k| t_end * k as f64 / time_bins as f64).collect();
        edges[time_bins] = t_end;
        Self::new(edges, lo, hi, space_bins)
    }

    /// Box `[lo, hi]` inflated about its center by the factor `1 + inflation`
    /// per axis. Degenerate axes borrow a width from the widest axis.
    pub fn inflated_box(lo: Vec3, hi: Vec3, inflation: f64) -> (Vec3, Vec3) {
        let widest = (hi - lo).max();
        let fallback = if widest > 0.0 { widest } else { 1.0 };
        let mut a = lo;
        let mut b = hi;
        for k in 0..3 {
            let ext = hi[k] - lo[k];
            let half = 0.5 * if ext > 0.0 { ext * (1.0 + inflation) } else { fallback * inflation };
            let mid = 0.5 * (lo[k] + hi[k]);
            a[k] = mid - half;
            b[k] = mid + half;
        }
        (a, b)
    }

    /// Axis-aligned bounding box of every sampled position.
    pub fn bounding_box(traj: &Trajectory) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in traj.samples() {
            for x in s.positions() {
                lo = lo.inf(x);
                hi = hi.sup(x);
            }
        }
        (lo, hi)
    }

    /// 16 time bins × 24³ cells over the trajectory's bounding box inflated
    /// by 5%.
    pub fn default_for(traj: &Trajectory) -> Result<Self> {
        let (lo, hi) = Self::bounding_box(traj);
        let (lo, hi) = Self::inflated_box(lo, hi, DEFAULT_INFLATION);
        Self::uniform(traj.t_end(), DEFAULT_TIME_BINS, lo, hi, [DEFAULT_SPACE_BINS; 3])
    }

    pub fn time_edges(&self) -> &[f64] {
        &self.time_edges
    }

    pub fn lo(&self) -> Vec3 {
        self.lo
    }

    pub fn hi(&self) -> Vec3 {
        self.hi
    }

    pub fn bins(&self) -> [usize; 3] {
        self.bins
    }

    pub fn time_bins(&self) -> usize {
        self.time_edges.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn cell_size(&self) -> Vec3 {
        let d = self.hi - self.lo;
        Vec3::new(
            d[0] / self.bins[0] as f64,
            d[1] / self.bins[1] as f64,
            d[2] / self.bins[2] as f64,
        )
    }

    /// Bin of `t`; the last bin is closed on the right.
    pub fn time_bin(&self, t: f64) -> Option<usize> {
        let e = &self.time_edges;
        let last = e.len() - 1;
        if t < e[0] || t > e[last] {
            return None;
        }
        if t == e[last] {
            return Some(last - 1);
        }
        Some(e.partition_point(|&edge| edge <= t) - 1)
    }

    pub fn time_center(&self, k: usize) -> f64 {
        0.5 * (self.time_edges[k] + self.time_edges[k + 1])
    }

    pub fn time_width(&self, k: usize) -> f64 {
        self.time_edges[k + 1] - self.time_edges[k]
    }

    /// Flat cell index (x fastest); the upper faces belong to the last cell.
    pub fn cell_index(&self, x: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if !(x[a] >= self.lo[a] && x[a] <= self.hi[a]) {
                return None;
            }
            let f = (x[a] - self.lo[a]) / (self.hi[a] - self.lo[a]) * self.bins[a] as f64;
            idx[a] = (f as usize).min(self.bins[a] - 1);
        }
        Some(idx[0] + self.bins[0] * (idx[1] + self.bins[1] * idx[2]))
    }

    pub fn cell_center(&self, cell: usize) -> Vec3 {
        let i = cell % self.bins[0];
        let j = (cell / self.bins[0]) % self.bins[1];
        let k = cell / (self.bins[0] * self.bins[1]);
        let d = self.cell_size();
        self.lo + Vec3::new((i as f64 + 0.5) * d[0], (j as f64 + 0.5) * d[1], (k as f64 + 0.5) * d[2])
    }

    /// Time bin of every sample, or an error if a sample or a bin is
    /// unaccounted for.
    fn assign_samples(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        let mut bins = Vec::with_capacity(traj.samples().len());
        for s in traj.samples() {
            let k = self
                .time_bin(s.t())
                .ok_or_else(|| Error::GridMismatch(format!("sample time {} outside the time edges", s.t())))?;
            bins.push(k);
        }
        for k in 0..self.time_bins() {
            if !bins.contains(&k) {
                return Err(Error::GridMismatch(format!("time bin {k} receives no samples")));
            }
        }
        Ok(bins)
    }
}

/// Per (time bin, cell) mass, mean velocity and fluctuation tensor, stored
/// time-bin major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFields {
    grid: GridSpec,
    n: usize,
    samples_per_bin: Vec<usize>,
    mass: Vec<f64>,
    mean_velocity: Vec<Vec3>,
    fluct: Vec<Mat3>,
}

impl CoarseFields {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples_per_bin(&self) -> &[usize] {
        &self.samples_per_bin
    }

    fn idx(&self, k: usize, cell: usize) -> usize {
        k * self.grid.n_cells() + cell
    }

    pub fn mass(&self, k: usize, cell: usize) -> f64 {
        self.mass[self.idx(k, cell)]
    }

    pub fn mean_velocity(&self, k: usize, cell: usize) -> Vec3 {
        self.mean_velocity[self.idx(k, cell)]
    }

    pub fn fluct_tensor(&self, k: usize, cell: usize) -> Mat3 {
        self.fluct[self.idx(k, cell)]
    }

    /// Masses of one time bin, indexed by cell.
    pub fn bin_masses(&self, k: usize) -> &[f64] {
        let c = self.grid.n_cells();
        &self.mass[k * c..(k + 1) * c]
    }

    /// Occupied cells of time bin `k`.
    pub fn occupied(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.bin_masses(k)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(c, _)| c)
    }

    /// Smallest eigenvalue of any occupied cell's tensor relative to that
    /// tensor's largest eigenvalue magnitude (zero tensors contribute 0).
    pub fn min_relative_eigenvalue(&self) -> f64 {
        let mut worst = 0.0f64;
        for (m, s) in self.mass.iter().zip(&self.fluct) {
            if *m == 0.0 {
                continue;
            }
            let eig = SymmetricEigen::new(*s).eigenvalues;
            let scale = eig.amax();
            if scale > 0.0 {
                worst = worst.min(eig.min() / scale);
            }
        }
        worst
    }

    /// Values for every (time bin, cell), including empty ones:
    /// `(k, cell, mass, mean velocity, tensor)`.
    pub fn from_parts(
        grid: GridSpec,
        n: usize,
        samples_per_bin: Vec<usize>,
        cells: Vec<(usize, usize, f64, Vec3, Mat3)>,
    ) -> Result<Self> {
        if samples_per_bin.len() != grid.time_bins() {
            return Err(Error::GridMismatch("sample counts do not match time bins".into()));
        }
        let total = grid.time_bins() * grid.n_cells();
        let mut f = CoarseFields {
            mass: vec![0.0; total],
            mean_velocity: vec![Vec3::zeros(); total],
            fluct: vec![Mat3::zeros(); total],
            grid,
            n,
            samples_per_bin,
        };
        for (k, c, m, u, s) in cells {
            if k >= f.grid.time_bins() || c >= f.grid.n_cells() {
                return Err(Error::GridMismatch(format!("cell ({k}, {c}) outside the grid")));
            }
            let i = f.idx(k, c);
            f.mass[i] = m;
            f.mean_velocity[i] = u;
            f.fluct[i] = s;
        }
        Ok(f)
    }
}

/// Cell-conditional statistics of the binned samples.
pub fn coarse_grain(traj: &Trajectory, grid: &GridSpec) -> Result<CoarseFields> {
    let sample_bins = grid.assign_samples(traj)?;
    let cells = grid.n_cells();
    let n = traj.n();

    // Cell index of every (sample, particle), checking coverage.
    let cell_of: Vec<Vec<usize>> = traj
        .samples()
        .par_iter()
        .map(|s| {
            s.positions()
                .iter()
                .enumerate()
                .map(|(i, x)| grid.cell_index(x).ok_or(Error::Uncovered { t: s.t(), index: i }))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;

    let per_bin: Vec<(usize, Vec<f64>, Vec<Vec3>, Vec<Mat3>)> = (0..grid.time_bins())
        .into_par_iter()
        .map(|k| {
            let members: Vec<usize> = (0..sample_bins.len()).filter(|&s| sample_bins[s] == k).collect();
            let mut count = vec![0usize; cells];
            let mut mean = vec![Vec3::zeros(); cells];
            for &s in &members {
                for (c, u) in cell_of[s].iter().zip(traj.samples()[s].velocities()) {
                    count[*c] += 1;
                    mean[*c] += u;
                }
            }
            for (m, &c) in mean.iter_mut().zip(&count) {
                if c > 0 {
                    *m /= c as f64;
                }
            }
            let mut cov = vec![Mat3::zeros(); cells];
            for &s in &members {
                for (c, u) in cell_of[s].iter().zip(traj.samples()[s].velocities()) {
                    let d = u - mean[*c];
                    cov[*c] += d * d.transpose();
                }
            }
            for (m, &c) in cov.iter_mut().zip(&count) {
                if c > 0 {
                    *m /= c as f64;
                }
            }
            let denom = (n * members.len()) as f64;
            let mass = count.iter().map(|&c| c as f64 / denom).collect();
            (members.len(), mass, mean, cov)
        })
        .collect();

    let total = grid.time_bins() * cells;
    let mut fields = CoarseFields {
        grid: grid.clone(),
        n,
        samples_per_bin: Vec::with_capacity(grid.time_bins()),
        mass: Vec::with_capacity(total),
        mean_velocity: Vec::with_capacity(total),
        fluct: Vec::with_capacity(total),
    };
    for (count, mass, mean, cov) in per_bin {
        fields.samples_per_bin.push(count);
        fields.mass.extend(mass);
        fields.mean_velocity.extend(mean);
        fields.fluct.extend(cov);
    }
    Ok(fields)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticSplit {
    /// `½ Σ_cells mass·|u|²`
    pub bulk: f64,
    /// `½ Σ_cells mass·tr S`
    pub fluctuation: f64,
    /// `½` times the mean second velocity moment of the binned samples.
    pub total: f64,
}

/// Bulk/fluctuation split of the kinetic energy per time bin.
pub fn kinetic_decomposition(traj: &Trajectory, fields: &CoarseFields) -> Result<Vec<KineticSplit>> {
    if traj.n() != fields.n {
        return Err(Error::GridMismatch(format!(
            "fields built from N = {} but trajectory has N = {}",
            fields.n,
            traj.n()
        )));
    }
    let grid = &fields.grid;
    let sample_bins = grid.assign_samples(traj)?;
    let mut totals = vec![0.0; grid.time_bins()];
    let mut counts = vec![0usize; grid.time_bins()];
    for (s, &k) in traj.samples().iter().zip(&sample_bins) {
        totals[k] += moment(&EmpiricalSnapshot::from_state(s), 2.0, Component::Velocity);
        counts[k] += 1;
    }
    if counts != fields.samples_per_bin {
        return Err(Error::GridMismatch("trajectory samples do not match the binned fields".into()));
    }
    Ok((0..grid.time_bins())
        .map(|k| {
            let (mut bulk, mut fluct) = (0.0, 0.0);
            for c in fields.occupied(k) {
                let m = fields.mass(k, c);
                bulk += m * fields.mean_velocity(k, c).norm_squared();
                fluct += m * fields.fluct_tensor(k, c).trace();
            }
            KineticSplit {
                bulk: 0.5 * bulk,
                fluctuation: 0.5 * fluct,
                total: 0.5 * totals[k] / counts[k] as f64,
            }
        })
        .collect())
}

/// Time-averaged total variation between mass arrays plus the mass-weighted
/// RMS difference of mean velocities over cells occupied in both.
pub fn field_distance(a: &CoarseFields, b: &CoarseFields) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch("field_distance needs identical grids".into()));
    }
    let bins = a.grid.time_bins();
    let mut tv = 0.0;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..bins {
        let (ma, mb) = (a.bin_masses(k), b.bin_masses(k));
        tv += 0.5 * ma.iter().zip(mb).map(|(x, y)| (x - y).abs()).sum::<f64>();
        for c in 0..a.grid.n_cells() {
            if ma[c] > 0.0 && mb[c] > 0.0 {
                let w = 0.5 * (ma[c] + mb[c]);
                num += w * (a.mean_velocity(k, c) - b.mean_velocity(k, c)).norm_squared();
                den += w;
            }
        }
    }
    let vel = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    Ok(tv / bins as f64 + vel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{SystemState, TrajectoryMeta};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn traj_of(states: Vec<(Vec<Vec3>, Vec<Vec3>)>, dt: f64) -> Trajectory {
        let samples = states
            .into_iter()
            .enumerate()
            .map(|(k, (x, u))| SystemState::new(k as f64 * dt, x, u).unwrap())
            .collect();
        Trajectory::new(
            samples,
            dt,
            1,
            TrajectoryMeta {
                sigma: 1.0,
                potential: "free".into(),
                seed: None,
                b_n: None,
            },
        )
        .unwrap()
    }

    fn one_cell(t_end: f64) -> GridSpec {
        GridSpec::uniform(t_end, 1, v(-1., -1., -1.), v(1., 1., 1.), [1, 1, 1]).unwrap()
    }

    #[test]
    fn symmetric_pair_in_one_cell() {
        let u = v(0.3, -0.2, 0.1);
        let tr = traj_of(
            vec![(vec![v(0., 0., 0.), v(0.1, 0., 0.)], vec![u, -u]); 2],
            1.0,
        );
        let f = coarse_grain(&tr, &one_cell(1.0)).unwrap();
        assert_eq!(f.mass(0, 0), 1.0);
        assert!(f.mean_velocity(0, 0).norm() < 1e-16);
        assert!((f.fluct_tensor(0, 0) - u * u.transpose()).norm() < 1e-16);
        let ks = kinetic_decomposition(&tr, &f).unwrap();
        assert!(ks[0].bulk.abs() < 1e-16);
        assert!((ks[0].fluctuation - 0.5 * u.norm_squared()).abs() < 1e-16);
    }

    #[test]
    fn three_velocity_covariance() {
        let x = vec![v(0., 0., 0.), v(0.1, 0., 0.), v(0., 0.1, 0.)];
        let u = vec![v(1., 0., 0.), v(0., 1., 0.), v(-1., -1., 0.)];
        let tr = traj_of(vec![(x.clone(), u.clone()), (x, u)], 1.0);
        let f = coarse_grain(&tr, &one_cell(1.0)).unwrap();
        assert!(f.mean_velocity(0, 0).norm() < 1e-16);
        let s = f.fluct_tensor(0, 0);
        let expect = Mat3::new(2. / 3., 1. / 3., 0., 1. / 3., 2. / 3., 0., 0., 0., 0.);
        // Off-diagonal: (0 + 0 + 1)/3.
        assert!((s - expect).norm() < 1e-15, "{s}");
        assert!((s[(0, 0)] - 2. / 3.).abs() < 1e-15 && (s[(2, 2)]).abs() < 1e-15);
    }

    #[test]
    fn single_particle_cells_have_zero_tensor() {
        let tr = traj_of(
            vec![(vec![v(-0.5, 0., 0.), v(0.5, 0., 0.)], vec![v(1., 2., 3.), v(0., 1., 0.)]); 2],
            1.0,
        );
        let grid = GridSpec::uniform(1.0, 1, v(-1., -1., -1.), v(1., 1., 1.), [2, 1, 1]).unwrap();
        let f = coarse_grain(&tr, &grid).unwrap();
        assert_eq!(f.fluct_tensor(0, 0), Mat3::zeros());
        assert_eq!(f.fluct_tensor(0, 1), Mat3::zeros());
        assert_eq!(f.mass(0, 0) + f.mass(0, 1), 1.0);
        assert_eq!(f.mean_velocity(0, 1), v(0., 1., 0.));
    }

    #[test]
    fn uncovered_particle_is_named() {
        let tr = traj_of(
            vec![
                (vec![v(0., 0., 0.), v(0.5, 0., 0.)], vec![Vec3::zeros(); 2]),
                (vec![v(0., 0., 0.), v(1.5, 0., 0.)], vec![Vec3::zeros(); 2]),
            ],
            1.0,
        );
        let err = coarse_grain(&tr, &one_cell(1.0)).unwrap_err();
        assert_eq!(err, Error::Uncovered { t: 1.0, index: 1 });
    }

    #[test]
    fn empty_time_bin_is_rejected() {
        let tr = traj_of(vec![(vec![v(0., 0., 0.), v(0.5, 0., 0.)], vec![Vec3::zeros(); 2]); 2], 1.0);
        let grid = GridSpec::uniform(1.0, 3, v(-1., -1., -1.), v(1., 1., 1.), [1, 1, 1]).unwrap();
        assert!(matches!(coarse_grain(&tr, &grid), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn distance_examples() {
        let x = vec![v(0., 0., 0.), v(0.5, 0., 0.)];
        let tr = traj_of(vec![(x.clone(), vec![Vec3::zeros(); 2]); 2], 1.0);
        let c = v(0.3, 0.4, 0.);
        let tr2 = traj_of(vec![(x, vec![c; 2]); 2], 1.0);
        let grid = GridSpec::uniform(1.0, 1, v(-1., -1., -1.), v(1., 1., 1.), [2, 2, 2]).unwrap();
        let a = coarse_grain(&tr, &grid).unwrap();
        let b = coarse_grain(&tr2, &grid).unwrap();
        assert_eq!(field_distance(&a, &a).unwrap(), 0.0);
        assert!((field_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(field_distance(&a, &b).unwrap(), field_distance(&b, &a).unwrap());
        let other = coarse_grain(&tr, &one_cell(1.0)).unwrap();
        assert!(field_distance(&a, &other).is_err());
    }

    #[test]
    fn time_bins_and_cells() {
        let g = GridSpec::uniform(1.0, 4, v(0., 0., 0.), v(1., 1., 1.), [2, 2, 2]).unwrap();
        assert_eq!(g.time_bin(0.0), Some(0));
        assert_eq!(g.time_bin(0.25), Some(1));
        assert_eq!(g.time_bin(1.0), Some(3));
        assert_eq!(g.time_bin(1.5), None);
        assert_eq!(g.cell_index(&v(1., 1., 1.)), Some(7));
        assert_eq!(g.cell_index(&v(0.2, 0.7, 0.2)), Some(2));
        assert_eq!(g.cell_center(2), v(0.25, 0.75, 0.25));
        assert_eq!(g.cell_index(&v(-0.1, 0.5, 0.5)), None);
        assert!(GridSpec::new(vec![0.0, 0.0], v(0., 0., 0.), v(1., 1., 1.), [1, 1, 1]).is_err());
    }

    #[test]
    fn inflated_box_handles_flat_axis() {
        let (lo, hi) = GridSpec::inflated_box(v(-1., -1., 0.), v(1., 1., 0.), 0.05);
        assert!((hi[0] - 1.05).abs() < 1e-15);
        assert!(hi[2] > 0.0 && lo[2] < 0.0);
    }
}
