//! N-sweeps: one generate/simulate/analyze/verify pipeline per N on a
//! shared grid and test-function set, compared against the largest N.

use std::fs::{File, OpenOptions};
use std::path::Path;

use hydrolim::dynamics::Trajectory;
use hydrolim::fields::{coarse_grain, field_distance, CoarseFields, GridSpec};
use hydrolim::measures::{char_values, char_values_distance, default_char_grid, SpaceTimeMeasure};
use hydrolim::weakform::{evaluate_residuals, interaction_decay, ResidualReport, TestFunction};
use hydrolim::Vec3;

use crate::commands::{generate, grid_for, simulate, summarize, test_functions, RunSummary};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::formats::{write_series, IcFile, FORMAT_VERSION};

pub const SWEEP_COLUMNS: [&str; 20] = [
    "format_version",
    "n",
    "status",
    "b_n",
    "b_n_burst",
    "sigma_n",
    "d_min",
    "h",
    "steps",
    "stride",
    "energy_drift",
    "min_distance_nondecreasing",
    "max_accel_over_b_n",
    "sup_interaction",
    "char_distance",
    "field_distance",
    "limit_continuity",
    "limit_momentum",
    "reference_n",
    "error",
];

pub const SUMMARY_COLUMNS: [&str; 5] = ["format_version", "quantity", "value", "points", "note"];

/// Everything one successful sub-run produced.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub ic: IcFile,
    pub traj: Trajectory,
    pub acc: Vec<Vec<Vec3>>,
    pub summary: RunSummary,
    pub fields: CoarseFields,
    pub residuals: ResidualReport,
    pub char_distance: f64,
    pub field_distance: f64,
    /// Max over test functions.
    pub sup_interaction: f64,
    pub limit_continuity: f64,
    pub limit_momentum: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Ascending in N; failures carry their error.
    pub runs: Vec<(usize, Result<SweepRun, CliError>)>,
    pub grid: Option<GridSpec>,
    pub test_functions: Vec<TestFunction>,
    pub reference_n: Option<usize>,
    pub slope: Option<f64>,
}

impl SweepOutcome {
    pub fn run(&self, n: usize) -> Option<&SweepRun> {
        self.runs.iter().find(|(m, _)| *m == n).and_then(|(_, r)| r.as_ref().ok())
    }
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(e).unwrap_or_default()
}

/// Starts a fresh report; rows are appended and flushed one at a time.
fn start_csv(path: &Path, header: &[&str]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn append_row(path: &Path, row: &[String]) -> Result<(), CliError> {
    let f = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(row).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    w.into_inner()
        .map_err(|e| CliError::io(path, e.error()))?
        .sync_data()
        .map_err(|e| CliError::io(path, e))
}

type Raw = (IcFile, Trajectory, Vec<Vec<Vec3>>, RunSummary);

fn raw_run(cfg: &RunConfig, n: usize, allow_uncertified: bool) -> Result<Raw, CliError> {
    let mut c = cfg.clone();
    c.ic.n = n;
    let ic = generate(&c, allow_uncertified)?;
    let (traj, acc) = simulate(&c, &ic, allow_uncertified)?;
    let summary = summarize(&traj, &acc, &c.potential)?;
    Ok((ic, traj, acc, summary))
}

/// Runs the sweep and writes the per-N report and the slope summary. Sub-run
/// failures are recorded as rows; the sweep itself fails only on I/O or an
/// invalid configuration.
pub fn run_sweep(cfg: &RunConfig, allow_uncertified: bool, out: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let ns = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("[sweep] n_values is required".into()))?
        .n_values
        .clone();
    let report_path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.sweep.clone());
    start_csv(&report_path, &SWEEP_COLUMNS)?;

    // Largest N first: it is the reference for every other row.
    let mut raw: Vec<(usize, Result<Raw, CliError>)> =
        ns.iter().rev().map(|&n| (n, raw_run(cfg, n, allow_uncertified))).collect();
    raw.reverse();

    let ok: Vec<&Trajectory> = raw.iter().filter_map(|(_, r)| r.as_ref().ok().map(|r| &r.1)).collect();
    let mut outcome = SweepOutcome {
        runs: Vec::new(),
        grid: None,
        test_functions: Vec::new(),
        reference_n: None,
        slope: None,
    };
    let shared = if ok.is_empty() {
        None
    } else {
        let grid = grid_for(cfg, ok.iter().copied())?;
        let tfs = test_functions(cfg, &grid)?;
        let (ref_n, ref_raw) = raw
            .iter()
            .rev()
            .find_map(|(n, r)| r.as_ref().ok().map(|r| (*n, r)))
            .expect("nonempty");
        let ref_fields = coarse_grain(&ref_raw.1, &grid)?;
        let char_grid = default_char_grid();
        let ref_chars = char_values(&SpaceTimeMeasure::from_trajectory(&ref_raw.1), &char_grid);
        Some((grid, tfs, ref_n, ref_fields, char_grid, ref_chars))
    };

    for (n, r) in raw {
        let run = match (r, &shared) {
            (Err(err), _) => Err(err),
            (Ok(_), None) => unreachable!("a successful run implies a shared grid"),
            (Ok((ic, traj, acc, summary)), Some((grid, tfs, _, ref_fields, char_grid, ref_chars))) => {
                finish_run(cfg, ic, traj, acc, summary, grid, tfs, ref_fields, char_grid, ref_chars)
            }
        };
        let ref_n = shared.as_ref().map(|s| s.2);
        append_row(&report_path, &row(n, &run, ref_n))?;
        outcome.runs.push((n, run));
    }

    let points: Vec<(f64, f64)> = outcome
        .runs
        .iter()
        .filter_map(|(n, r)| r.as_ref().ok().map(|r| (*n as f64, r.sup_interaction)))
        .collect();
    let fit = interaction_decay(&points);
    outcome.slope = fit.as_ref().ok().copied();
    // With --out the summary goes beside the report.
    let summary_path = match out {
        None => cfg.output.sweep_summary.clone(),
        Some(_) => report_path.with_file_name(
            cfg.output.sweep_summary.file_name().unwrap_or_else(|| "sweep_summary.csv".as_ref()),
        ),
    };
    start_csv(&summary_path, &SUMMARY_COLUMNS)?;
    let (value, note) = match &fit {
        Ok(s) => (e(*s), String::new()),
        Err(err) => (String::new(), err.to_string()),
    };
    append_row(
        &summary_path,
        &[
            FORMAT_VERSION.to_string(),
            "interaction_decay_slope".into(),
            value,
            points.len().to_string(),
            note,
        ],
    )?;

    if let Some((grid, tfs, ref_n, ..)) = shared {
        outcome.grid = Some(grid);
        outcome.test_functions = tfs;
        outcome.reference_n = Some(ref_n);
    }
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    cfg: &RunConfig,
    ic: IcFile,
    traj: Trajectory,
    acc: Vec<Vec<Vec3>>,
    summary: RunSummary,
    grid: &GridSpec,
    tfs: &[TestFunction],
    ref_fields: &CoarseFields,
    char_grid: &[hydrolim::measures::Frequency],
    ref_chars: &[num_complex::Complex64],
) -> Result<SweepRun, CliError> {
    let fields = coarse_grain(&traj, grid)?;
    let residuals = evaluate_residuals(&traj, &acc, Some(&fields), tfs, cfg.testfns.interaction)?;
    let chars = char_values(&SpaceTimeMeasure::from_trajectory(&traj), char_grid);
    let rows: Vec<_> = residuals.rows.iter().filter_map(|r| r.as_ref().ok()).collect();
    let max = |f: &dyn Fn(&hydrolim::weakform::ResidualRow) -> f64| rows.iter().map(|r| f(r)).fold(0.0, f64::max);
    Ok(SweepRun {
        char_distance: char_values_distance(&chars, ref_chars),
        field_distance: field_distance(&fields, ref_fields)?,
        sup_interaction: max(&|r| r.sup_interaction),
        limit_continuity: max(&|r| r.limit_continuity.unwrap_or(0.0).abs()),
        limit_momentum: max(&|r| r.limit_momentum.map_or(0.0, |m| m.norm())),
        ic,
        traj,
        acc,
        summary,
        fields,
        residuals,
    })
}

fn row(n: usize, run: &Result<SweepRun, CliError>, ref_n: Option<usize>) -> Vec<String> {
    let mut r = vec![FORMAT_VERSION.to_string(), n.to_string()];
    match run {
        Ok(s) => {
            r.push("ok".into());
            r.extend([opt(s.ic.b_n), opt(s.ic.b_n_burst), opt(s.ic.sigma_n), e(s.ic.ic.d_min())]);
            r.extend([e(s.summary.h), s.summary.steps.to_string(), s.summary.stride.to_string()]);
            r.extend([
                e(s.summary.energy_drift),
                s.summary.min_distance_nondecreasing.to_string(),
                opt(s.summary.max_accel_ratio),
                e(s.sup_interaction),
                e(s.char_distance),
                e(s.field_distance),
                e(s.limit_continuity),
                e(s.limit_momentum),
            ]);
            r.push(ref_n.map(|m| m.to_string()).unwrap_or_default());
            r.push(String::new());
        }
        Err(err) => {
            r.push(format!("failed-exit-{}", err.exit_code()));
            r.extend(std::iter::repeat(String::new()).take(SWEEP_COLUMNS.len() - 4));
            r.push(err.to_string());
        }
    }
    r
}

/// `quantity vs N` plot files from a sweep report.
pub fn write_sweep_plots(report: &Path, dir: &Path) -> Result<(), CliError> {
    let mut rd = csv::Reader::from_path(report).map_err(|e| CliError::io(report, e))?;
    let headers = rd.headers().map_err(|e| CliError::io(report, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let wanted = ["b_n", "sigma_n", "sup_interaction", "char_distance", "field_distance", "limit_momentum", "energy_drift"];
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); wanted.len()];
    let n_col = col("n").ok_or_else(|| CliError::Validation("sweep report lacks an n column".into()))?;
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::io(report, e))?;
        let Ok(n) = rec[n_col].parse::<f64>() else { continue };
        for (k, name) in wanted.iter().enumerate() {
            if let Some(v) = col(name).and_then(|c| rec[c].parse::<f64>().ok()) {
                series[k].push((n, v));
            }
        }
    }
    for (name, pts) in wanted.iter().zip(&series) {
        write_series(&dir.join(format!("{name}_vs_n.csv")), "n", name, pts)?;
    }
    Ok(())
}
