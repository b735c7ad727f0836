use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use hydrolim::dynamics::{
    default_step, hamiltonian, integrate_with_accelerations, min_pair_distance, step_count, Trajectory,
    TrajectoryMeta,
};
use hydrolim::fields::{coarse_grain, kinetic_decomposition, GridSpec};
use hydrolim::initcond::{
    compute_b_n, gen_burst, gen_lattice_cloud, gen_lattice_plane, gen_lifted, gen_planar, verify_plan,
    InitialConfiguration, ScalingMode, ScalingPlan,
};
use hydrolim::measures::{moment, Component, EmpiricalSnapshot};
use hydrolim::weakform::{default_test_functions, evaluate_residuals, trajectory_accelerations, TestFunction};
use hydrolim::{PotentialSpec, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Generator, RunConfig, SignPattern, StepChoice};
use crate::error::CliError;
use crate::formats::{read_fields, read_trajectory, write_fields, write_series, write_trajectory, IcFile, ResidualFile};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    /// Output path of the running subcommand, replacing the configured one.
    pub out: Option<PathBuf>,
    pub allow_uncertified: bool,
}

impl Globals {
    fn out_or(&self, configured: &Path) -> PathBuf {
        self.out.clone().unwrap_or_else(|| configured.to_path_buf())
    }
}

fn positions(cfg: &RunConfig) -> Result<InitialConfiguration, CliError> {
    let ic = &cfg.ic;
    Ok(match ic.generator {
        Generator::LatticeBurst => gen_burst(&gen_lattice_cloud(ic.n, ic.alpha, ic.jitter, ic.seed)?, ic.lambda)?,
        Generator::Planar => {
            let ab = gen_lattice_plane(ic.n, ic.alpha, ic.jitter, ic.seed)?;
            let signs: Vec<i8> = match ic.signs {
                SignPattern::Equal => vec![1; ic.n],
                SignPattern::Alternating => (0..ic.n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect(),
            };
            let [a, b, g] = ic.velocity;
            gen_planar(&ab, a, b, g, &signs)?
        }
        Generator::Lifted => {
            let ab = gen_lattice_plane(ic.n, ic.alpha, ic.jitter, ic.seed)?;
            // Separate stream from the lattice jitter.
            let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
            rng.set_stream(1);
            let c: Vec<f64> = (0..ic.n).map(|_| rng.gen_range(-ic.lift..=ic.lift)).collect();
            gen_lifted(&ab, &c)?
        }
    })
}

/// Builds the initial configuration and its certificate. Refuses
/// uncertified data unless `allow_uncertified`.
pub fn generate(cfg: &RunConfig, allow_uncertified: bool) -> Result<IcFile, CliError> {
    let ic = positions(cfg)?;
    let b_n_burst = compute_b_n(&ic, cfg.t_end, ScalingMode::BurstClosedForm).ok();
    let (plan, checks) = match ScalingPlan::build(&ic, cfg.t_end, cfg.scaling, &cfg.potential) {
        Ok(plan) => {
            let checks = verify_plan(&ic, &plan, &cfg.potential).to_string();
            (Some(plan), checks.lines().map(str::to_string).collect::<Vec<_>>())
        }
        Err(e) => (None, vec![format!("plan FAIL {e}")]),
    };
    let certified = plan.as_ref().is_some_and(|p| p.certified);
    if !certified && !allow_uncertified {
        return Err(CliError::Validation(format!(
            "initial configuration is not certified:\n{}",
            checks.join("\n")
        )));
    }
    Ok(IcFile {
        generator: cfg.ic.generator.as_str().into(),
        seed: cfg.ic.seed,
        potential: cfg.potential.descriptor(),
        t_end: cfg.t_end,
        mode: cfg.scaling,
        b_n: plan.as_ref().map(|p| p.b_n),
        b_n_burst,
        sigma_n: plan.as_ref().map(|p| p.sigma_n),
        certified,
        checks,
        ic,
    })
}

pub fn cmd_generate(cfg: &RunConfig, g: &Globals) -> Result<PathBuf, CliError> {
    let file = generate(cfg, g.allow_uncertified)?;
    let path = g.out_or(&cfg.output.ic);
    file.write(&path)?;
    Ok(path)
}

/// Step actually used for a run: configured, or the default for the data.
pub fn choose_step(cfg: &RunConfig, ic: &IcFile) -> Result<(f64, usize), CliError> {
    match cfg.h {
        StepChoice::Fixed(h) => Ok((h, step_count(cfg.t_end, h, cfg.stride)?)),
        StepChoice::Auto => Ok(default_step(
            cfg.t_end,
            ic.ic.d_min(),
            ic.ic.u_sup(),
            ic.b_n.unwrap_or(0.0),
            cfg.stride,
        )),
    }
}

/// Integrates a generated configuration. The certificate's σ is used when
/// present, otherwise `potential.sigma`.
pub fn simulate(
    cfg: &RunConfig,
    ic: &IcFile,
    allow_uncertified: bool,
) -> Result<(Trajectory, Vec<Vec<Vec3>>), CliError> {
    if !ic.certified && !allow_uncertified {
        return Err(CliError::Validation(
            "initial configuration is not certified (use --allow-uncertified)".into(),
        ));
    }
    if ic.potential != cfg.potential.descriptor() {
        return Err(CliError::Validation(format!(
            "IC file was certified for potential '{}', config has '{}'",
            ic.potential,
            cfg.potential.descriptor()
        )));
    }
    if ic.t_end != cfg.t_end {
        return Err(CliError::Validation(format!(
            "IC file was certified for T = {}, config has T = {}",
            ic.t_end, cfg.t_end
        )));
    }
    let sigma = ic.sigma_n.or(cfg.sigma).ok_or_else(|| {
        CliError::Validation("no certified σ in the IC file; set potential.sigma for an uncertified run".into())
    })?;
    let (h, _) = choose_step(cfg, ic)?;
    let (traj, acc) = integrate_with_accelerations(&ic.ic.to_state(), &cfg.potential, sigma, cfg.t_end, h, cfg.stride)?;
    let meta = TrajectoryMeta {
        seed: Some(ic.seed),
        b_n: ic.b_n,
        ..traj.meta().clone()
    };
    Ok((traj.with_meta(meta), acc))
}

/// Per-run diagnostics written to the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub n: usize,
    pub h: f64,
    pub steps: usize,
    pub stride: usize,
    /// `max_t |H(t) - H(0)| / max(|H(0)|, 1)`.
    pub energy_drift: f64,
    pub min_distances: Vec<f64>,
    /// Each sample's minimum distance is at least the previous one times
    /// `1 - 1e-9`.
    pub min_distance_nondecreasing: bool,
    /// Largest `|a_i|` over samples divided by `B_N`, when certified.
    pub max_accel_ratio: Option<f64>,
    pub max_accels: Vec<f64>,
}

pub const MONOTONE_SLACK: f64 = 1e-9;

pub fn summarize(traj: &Trajectory, acc: &[Vec<Vec3>], potential: &PotentialSpec) -> Result<RunSummary, CliError> {
    let sigma = traj.sigma();
    let energies: Vec<f64> = traj
        .samples()
        .iter()
        .map(|s| hamiltonian(s, potential, sigma))
        .collect::<Result<_, _>>()?;
    let e0 = energies[0];
    let energy_drift = energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(1.0);
    let min_distances: Vec<f64> = traj.samples().iter().map(min_pair_distance).collect();
    let min_distance_nondecreasing = min_distances.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_SLACK));
    let max_accels: Vec<f64> = acc
        .par_iter()
        .map(|a| a.iter().map(|v| v.norm()).fold(0.0, f64::max))
        .collect();
    let peak = max_accels.iter().copied().fold(0.0, f64::max);
    Ok(RunSummary {
        n: traj.n(),
        h: traj.h(),
        steps: (traj.samples().len() - 1) * traj.stride(),
        stride: traj.stride(),
        energy_drift,
        min_distances,
        min_distance_nondecreasing,
        max_accel_ratio: traj.meta().b_n.map(|b| peak / b),
        max_accels,
    })
}

impl RunSummary {
    /// One deterministic `key=value` log line.
    pub fn log_line(&self, traj_path: &Path) -> String {
        let ratio = self.max_accel_ratio.map_or_else(|| "none".into(), |r| format!("{r:e}"));
        format!(
            "simulate n={} h={:e} steps={} stride={} energy_drift={:e} min_distance_initial={:e} \
             min_distance_final={:e} min_distance_nondecreasing={} max_accel_over_b_n={} trajectory={}",
            self.n,
            self.h,
            self.steps,
            self.stride,
            self.energy_drift,
            self.min_distances[0],
            self.min_distances[self.min_distances.len() - 1],
            self.min_distance_nondecreasing,
            ratio,
            traj_path.display()
        )
    }
}

pub fn append_log(path: &Path, line: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| CliError::io(path, e))
}

pub fn cmd_simulate(cfg: &RunConfig, g: &Globals) -> Result<RunSummary, CliError> {
    let ic = IcFile::read(&cfg.output.ic)?;
    let (traj, acc) = simulate(cfg, &ic, g.allow_uncertified)?;
    let path = g.out_or(&cfg.output.trajectory);
    write_trajectory(&path, &traj)?;
    let summary = summarize(&traj, &acc, &cfg.potential)?;
    append_log(&cfg.output.log, &summary.log_line(&path))?;
    Ok(summary)
}

/// Grid from the config: explicit box, or the inflated bounding box of the
/// given trajectories.
pub fn grid_for<'a>(cfg: &RunConfig, trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<GridSpec, CliError> {
    let (lo, hi) = match cfg.grid.bounds {
        Some(b) => b,
        None => {
            let mut lo = Vec3::repeat(f64::INFINITY);
            let mut hi = Vec3::repeat(f64::NEG_INFINITY);
            for t in trajs {
                let (l, h) = GridSpec::bounding_box(t);
                lo = lo.inf(&l);
                hi = hi.sup(&h);
            }
            GridSpec::inflated_box(lo, hi, cfg.grid.inflation)
        }
    };
    Ok(GridSpec::uniform(cfg.t_end, cfg.grid.time_bins, lo, hi, cfg.grid.space_bins)?)
}

pub fn test_functions(cfg: &RunConfig, grid: &GridSpec) -> Result<Vec<TestFunction>, CliError> {
    if !cfg.testfns.explicit.is_empty() {
        return Ok(cfg.testfns.explicit.clone());
    }
    let t = &cfg.testfns;
    Ok(default_test_functions(
        cfg.t_end,
        &grid.lo(),
        &grid.hi(),
        t.count,
        t.radius_fraction,
        t.amplitude,
    )?)
}

fn potential_of(traj: &Trajectory) -> Result<PotentialSpec, CliError> {
    Ok(PotentialSpec::from_descriptor(&traj.meta().potential)?)
}

pub fn cmd_analyze(cfg: &RunConfig, g: &Globals) -> Result<PathBuf, CliError> {
    let traj = read_trajectory(&cfg.output.trajectory)?;
    let grid = grid_for(cfg, [&traj])?;
    let fields = coarse_grain(&traj, &grid)?;
    let path = g.out_or(&cfg.output.fields);
    write_fields(&path, &fields)?;
    Ok(path)
}

/// Writes the residual report. Test functions with invalid supports are
/// listed in the report and then reported as a validation failure.
pub fn cmd_verify(cfg: &RunConfig, g: &Globals) -> Result<ResidualFile, CliError> {
    let traj = read_trajectory(&cfg.output.trajectory)?;
    let pot = potential_of(&traj)?;
    let acc = trajectory_accelerations(&traj, &pot, traj.sigma())?;
    let grid = grid_for(cfg, [&traj])?;
    let fields = coarse_grain(&traj, &grid)?;
    let tfs = test_functions(cfg, &grid)?;
    let report = evaluate_residuals(&traj, &acc, Some(&fields), &tfs, cfg.testfns.interaction)?;
    let file = ResidualFile {
        report,
        test_functions: tfs,
        b_n: traj.meta().b_n,
        t_end: traj.t_end(),
    };
    let path = g.out_or(&cfg.output.residuals);
    file.write(&path)?;
    let bad: Vec<String> = file
        .report
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| format!("test function {i}: {e}")))
        .collect();
    if !bad.is_empty() {
        return Err(CliError::Validation(format!(
            "report written to {}, but some supports are invalid:\n{}",
            path.display(),
            bad.join("\n")
        )));
    }
    Ok(file)
}

/// Two-column plot files under the plots directory.
pub fn cmd_report(cfg: &RunConfig, g: &Globals) -> Result<PathBuf, CliError> {
    let dir = g.out_or(&cfg.output.plots);
    let traj = read_trajectory(&cfg.output.trajectory)?;
    let pot = potential_of(&traj)?;
    let acc = trajectory_accelerations(&traj, &pot, traj.sigma())?;
    let s = summarize(&traj, &acc, &pot)?;
    let times = traj.times();
    let series = |vals: &[f64]| -> Vec<(f64, f64)> { times.iter().copied().zip(vals.iter().copied()).collect() };
    write_series(&dir.join("min_distance.csv"), "t", "min_distance", &series(&s.min_distances))?;
    write_series(&dir.join("max_acceleration.csv"), "t", "max_acceleration", &series(&s.max_accels))?;
    let energies: Vec<f64> = traj
        .samples()
        .iter()
        .map(|x| hamiltonian(x, &pot, traj.sigma()))
        .collect::<Result<_, _>>()?;
    let scale = energies[0].abs().max(1.0);
    let drift: Vec<f64> = energies.iter().map(|e| (e - energies[0]) / scale).collect();
    write_series(&dir.join("energy_drift.csv"), "t", "relative_energy_change", &series(&drift))?;
    let m2: Vec<f64> = traj
        .samples()
        .iter()
        .map(|x| moment(&EmpiricalSnapshot::from_state(x), 2.0, Component::Velocity))
        .collect();
    write_series(&dir.join("second_moment.csv"), "t", "velocity_second_moment", &series(&m2))?;

    let fields = match read_fields(&cfg.output.fields) {
        Ok(f) => f,
        Err(_) => coarse_grain(&traj, &grid_for(cfg, [&traj])?)?,
    };
    let split = kinetic_decomposition(&traj, &fields)?;
    let centers: Vec<f64> = (0..split.len()).map(|k| fields.grid().time_center(k)).collect();
    let pick = |f: fn(&hydrolim::fields::KineticSplit) -> f64| -> Vec<(f64, f64)> {
        centers.iter().zip(&split).map(|(t, k)| (*t, f(k))).collect()
    };
    write_series(&dir.join("kinetic_bulk.csv"), "t", "bulk", &pick(|k| k.bulk))?;
    write_series(&dir.join("kinetic_fluctuation.csv"), "t", "fluctuation", &pick(|k| k.fluctuation))?;

    if cfg.output.sweep.exists() {
        crate::sweep::write_sweep_plots(&cfg.output.sweep, &dir)?;
    }
    Ok(dir)
}
