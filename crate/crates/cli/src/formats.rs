//! On-disk formats. Floats in trajectory and IC files use 17 significant
//! digits; CSV reports use the shortest exact exponent form. Either way,
//! reading a file back reproduces the binary64 values bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hydrolim::dynamics::{SystemState, Trajectory, TrajectoryMeta};
use hydrolim::fields::{CoarseFields, GridSpec};
use hydrolim::initcond::{InitialConfiguration, ScalingMode};
use hydrolim::weakform::{ResidualReport, ResidualRow, TestFunction};
use hydrolim::{Mat3, Vec3};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

fn malformed(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

/// Writes through a sibling temporary file renamed into place, so a failed
/// write never leaves a truncated file under the final name.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let result = File::create(&tmp).and_then(|file| {
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    });
    match result.and_then(|_| std::fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(CliError::io(path, e))
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.16e}"))
}

/// `# key value` header lines, in order.
struct Header {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str, CliError> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| malformed(&self.path, format!("missing header '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key)?;
        v.parse().map_err(|_| malformed(&self.path, format!("bad header {key} = '{v}'")))
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key)? {
            "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    fn check_version(&self, kind: &str) -> Result<(), CliError> {
        if self.get("hydrolim")? != kind {
            return Err(malformed(&self.path, format!("not a {kind} file")));
        }
        let v: u32 = self.parse("format-version")?;
        if v != FORMAT_VERSION {
            return Err(malformed(&self.path, format!("unsupported format-version {v}")));
        }
        Ok(())
    }
}

/// Splits leading `#` lines from the body.
fn read_header(path: &Path) -> Result<(Header, Vec<String>), CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut header = Header {
        path: path.to_path_buf(),
        entries: Vec::new(),
    };
    let mut body = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        match line.strip_prefix('#') {
            Some(h) if body.is_empty() => {
                let h = h.trim();
                let (k, v) = h.split_once(' ').unwrap_or((h, ""));
                header.entries.push((k.to_string(), v.trim().to_string()));
            }
            _ => body.push(line),
        }
    }
    Ok((header, body))
}

fn parse_row(path: &Path, line: &str, expect_index: usize) -> Result<(Vec3, Vec3), CliError> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 7 || f[0].parse::<usize>().ok() != Some(expect_index) {
        return Err(malformed(path, format!("expected row {expect_index}, got '{line}'")));
    }
    let mut v = [0.0; 6];
    for (slot, s) in v.iter_mut().zip(&f[1..]) {
        *slot = s.parse().map_err(|_| malformed(path, format!("bad number '{s}'")))?;
    }
    Ok((Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])))
}

fn write_row(w: &mut impl Write, i: usize, x: &Vec3, u: &Vec3) -> std::io::Result<()> {
    writeln!(
        w,
        "{i} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
        x[0], x[1], x[2], u[0], u[1], u[2]
    )
}

/// An initial configuration with the certificate it was generated under.
#[derive(Debug, Clone, PartialEq)]
pub struct IcFile {
    pub generator: String,
    pub seed: u64,
    pub potential: String,
    pub t_end: f64,
    pub mode: ScalingMode,
    pub b_n: Option<f64>,
    pub b_n_burst: Option<f64>,
    pub sigma_n: Option<f64>,
    pub certified: bool,
    /// One line per certificate check.
    pub checks: Vec<String>,
    pub ic: InitialConfiguration,
}

impl IcFile {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let ic = &self.ic;
        write_atomic(path, |w| {
            writeln!(w, "# hydrolim initial-configuration")?;
            writeln!(w, "# format-version {FORMAT_VERSION}")?;
            writeln!(w, "# generator {}", self.generator)?;
            writeln!(w, "# n {}", ic.n())?;
            writeln!(w, "# seed {}", self.seed)?;
            writeln!(w, "# potential {}", self.potential)?;
            writeln!(w, "# t_end {:.16e}", self.t_end)?;
            writeln!(w, "# x_sup {:.16e}", ic.x_sup())?;
            writeln!(w, "# u_sup {:.16e}", ic.u_sup())?;
            writeln!(w, "# d_min {:.16e}", ic.d_min())?;
            writeln!(w, "# align_min {:.16e}", ic.align_min())?;
            let (i, j) = ic.align_pair();
            writeln!(w, "# align_pair {i},{j}")?;
            writeln!(w, "# scaling-mode {}", self.mode)?;
            writeln!(w, "# b_n {}", opt_f64(self.b_n))?;
            writeln!(w, "# b_n_burst {}", opt_f64(self.b_n_burst))?;
            writeln!(w, "# sigma_n {}", opt_f64(self.sigma_n))?;
            writeln!(w, "# certified {}", self.certified)?;
            for c in &self.checks {
                writeln!(w, "# check {c}")?;
            }
            for (i, (x, u)) in ic.positions().iter().zip(ic.velocities()).enumerate() {
                write_row(w, i, x, u)?;
            }
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let (h, body) = read_header(path)?;
        h.check_version("initial-configuration")?;
        let n: usize = h.parse("n")?;
        if body.len() != n {
            return Err(malformed(path, format!("expected {n} rows, found {}", body.len())));
        }
        let (mut x, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (i, line) in body.iter().enumerate() {
            let (xi, ui) = parse_row(path, line, i)?;
            x.push(xi);
            u.push(ui);
        }
        let ic = InitialConfiguration::new(x, u).map_err(|e| malformed(path, e))?;
        let certified = match h.get("certified")? {
            "true" => true,
            "false" => false,
            v => return Err(malformed(path, format!("bad certified flag '{v}'"))),
        };
        Ok(IcFile {
            generator: h.get("generator")?.to_string(),
            seed: h.parse("seed")?,
            potential: h.get("potential")?.to_string(),
            t_end: h.parse("t_end")?,
            mode: ScalingMode::parse(h.get("scaling-mode")?).map_err(|e| malformed(path, e))?,
            b_n: h.opt_f64("b_n")?,
            b_n_burst: h.opt_f64("b_n_burst")?,
            sigma_n: h.opt_f64("sigma_n")?,
            certified,
            checks: h
                .entries
                .iter()
                .filter(|(k, _)| k == "check")
                .map(|(_, v)| v.clone())
                .collect(),
            ic,
        })
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let meta = traj.meta();
    write_atomic(path, |w| {
        writeln!(w, "# hydrolim trajectory")?;
        writeln!(w, "# format-version {FORMAT_VERSION}")?;
        writeln!(w, "# n {}", traj.n())?;
        writeln!(w, "# t_end {:.16e}", traj.t_end())?;
        writeln!(w, "# h {:.16e}", traj.h())?;
        writeln!(w, "# stride {}", traj.stride())?;
        writeln!(w, "# sigma {:.16e}", meta.sigma)?;
        writeln!(w, "# potential {}", meta.potential)?;
        match meta.seed {
            Some(s) => writeln!(w, "# seed {s}")?,
            None => writeln!(w, "# seed none")?,
        }
        writeln!(w, "# b_n {}", opt_f64(meta.b_n))?;
        writeln!(w, "# samples {}", traj.samples().len())?;
        for s in traj.samples() {
            writeln!(w, "t {:.16e}", s.t())?;
            for (i, (x, u)) in s.positions().iter().zip(s.velocities()).enumerate() {
                write_row(w, i, x, u)?;
            }
        }
        Ok(())
    })
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let (h, body) = read_header(path)?;
    h.check_version("trajectory")?;
    let n: usize = h.parse("n")?;
    let count: usize = h.parse("samples")?;
    if body.len() != count * (n + 1) {
        return Err(malformed(path, format!("expected {count} samples of {n} rows")));
    }
    let mut samples = Vec::with_capacity(count);
    for block in body.chunks(n + 1) {
        let t: f64 = block[0]
            .strip_prefix("t ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| malformed(path, format!("expected 't <value>', got '{}'", block[0])))?;
        let (mut x, mut u) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (i, line) in block[1..].iter().enumerate() {
            let (xi, ui) = parse_row(path, line, i)?;
            x.push(xi);
            u.push(ui);
        }
        samples.push(SystemState::new(t, x, u).map_err(|e| malformed(path, e))?);
    }
    let seed = match h.get("seed")? {
        "none" => None,
        _ => Some(h.parse("seed")?),
    };
    let meta = TrajectoryMeta {
        sigma: h.parse("sigma")?,
        potential: h.get("potential")?.to_string(),
        seed,
        b_n: h.opt_f64("b_n")?,
    };
    let traj = Trajectory::new(samples, h.parse("h")?, h.parse("stride")?, meta).map_err(|e| malformed(path, e))?;
    let t_end: f64 = h.parse("t_end")?;
    if traj.t_end() != t_end {
        return Err(malformed(path, "last sample time differs from t_end"));
    }
    Ok(traj)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

fn parse_floats(path: &Path, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| malformed(path, format!("bad number '{x}'"))))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        CliError::io(path, e)
    } else {
        malformed(path, e)
    }
}

const FIELD_COLUMNS: [&str; 15] = [
    "time_bin", "cell", "mass", "u1", "u2", "u3", "s11", "s12", "s13", "s21", "s22", "s23", "s31", "s32", "s33",
];

/// Occupied cells only; the grid goes in `#` lines ahead of the CSV header.
pub fn write_fields(path: &Path, f: &CoarseFields) -> Result<(), CliError> {
    let g = f.grid();
    write_atomic(path, |w| {
        writeln!(w, "# hydrolim fields")?;
        writeln!(w, "# format-version {FORMAT_VERSION}")?;
        writeln!(w, "# n {}", f.n())?;
        writeln!(w, "# time_edges {}", join(g.time_edges()))?;
        writeln!(w, "# lo {}", join(g.lo().as_slice()))?;
        writeln!(w, "# hi {}", join(g.hi().as_slice()))?;
        let b = g.bins();
        writeln!(w, "# bins {},{},{}", b[0], b[1], b[2])?;
        let spb: Vec<String> = f.samples_per_bin().iter().map(|c| c.to_string()).collect();
        writeln!(w, "# samples_per_bin {}", spb.join(","))?;
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(FIELD_COLUMNS)?;
        for k in 0..g.time_bins() {
            for c in f.occupied(k) {
                let u = f.mean_velocity(k, c);
                let s = f.fluct_tensor(k, c);
                let mut rec = vec![k.to_string(), c.to_string(), format!("{:e}", f.mass(k, c))];
                rec.extend(u.iter().map(|v| format!("{v:e}")));
                for r in 0..3 {
                    rec.extend((0..3).map(|col| format!("{:e}", s[(r, col)])));
                }
                cw.write_record(&rec)?;
            }
        }
        cw.flush()
    })
}

pub fn read_fields(path: &Path) -> Result<CoarseFields, CliError> {
    let (h, body) = read_header(path)?;
    h.check_version("fields")?;
    let edges = parse_floats(path, h.get("time_edges")?)?;
    let lo = parse_floats(path, h.get("lo")?)?;
    let hi = parse_floats(path, h.get("hi")?)?;
    let bins: Vec<usize> = h
        .get("bins")?
        .split(',')
        .map(|b| b.parse().map_err(|_| malformed(path, "bad bins")))
        .collect::<Result<_, _>>()?;
    let spb: Vec<usize> = h
        .get("samples_per_bin")?
        .split(',')
        .map(|b| b.parse().map_err(|_| malformed(path, "bad samples_per_bin")))
        .collect::<Result<_, _>>()?;
    if lo.len() != 3 || hi.len() != 3 || bins.len() != 3 {
        return Err(malformed(path, "grid box needs three components"));
    }
    let grid = GridSpec::new(
        edges,
        Vec3::from_column_slice(&lo),
        Vec3::from_column_slice(&hi),
        [bins[0], bins[1], bins[2]],
    )
    .map_err(|e| malformed(path, e))?;
    let text = body.join("\n");
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers().map_err(|e| csv_err(path, e))? != FIELD_COLUMNS.as_slice() {
        return Err(malformed(path, "unexpected fields columns"));
    }
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let int = |i: usize| rec[i].parse::<usize>().map_err(|_| malformed(path, format!("bad index '{}'", &rec[i])));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| malformed(path, format!("bad number '{}'", &rec[i])));
        let u = Vec3::new(num(3)?, num(4)?, num(5)?);
        let mut s = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                s[(r, c)] = num(6 + 3 * r + c)?;
            }
        }
        cells.push((int(0)?, int(1)?, num(2)?, u, s));
    }
    CoarseFields::from_parts(grid, h.parse("n")?, spb, cells).map_err(|e| malformed(path, e))
}

pub const RESIDUAL_COLUMNS: [&str; 30] = [
    "format_version",
    "index",
    "status",
    "t0",
    "x0_1",
    "x0_2",
    "x0_3",
    "rho_t",
    "rho_x",
    "amplitude",
    "sup_phi",
    "discrete_continuity",
    "discrete_momentum_1",
    "discrete_momentum_2",
    "discrete_momentum_3",
    "interaction_1",
    "interaction_2",
    "interaction_3",
    "sup_interaction",
    "limit_continuity",
    "limit_momentum_1",
    "limit_momentum_2",
    "limit_momentum_3",
    "h",
    "stride",
    "grid",
    "b_n",
    "bound_sup_interaction",
    "bound_interaction",
    "error",
];

/// A residual report plus the run context needed to state its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFile {
    pub report: ResidualReport,
    /// Test function of every row, including rows that failed.
    pub test_functions: Vec<TestFunction>,
    pub b_n: Option<f64>,
    pub t_end: f64,
}

fn e(v: f64) -> String {
    format!("{v:e}")
}

impl ResidualFile {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let r = &self.report;
        write_atomic(path, |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(RESIDUAL_COLUMNS)?;
            for (i, (row, tf)) in r.rows.iter().zip(&self.test_functions).enumerate() {
                let mut rec = vec![FORMAT_VERSION.to_string(), i.to_string()];
                rec.push(if row.is_ok() { "ok" } else { "invalid" }.into());
                rec.extend([e(tf.t0), e(tf.x0[0]), e(tf.x0[1]), e(tf.x0[2]), e(tf.rho_t), e(tf.rho_x)]);
                rec.extend([e(tf.amplitude), e(tf.sup_abs())]);
                let blank = |n: usize| vec![String::new(); n];
                let bound = |sup: f64| match self.b_n {
                    Some(b) => (sup <= tf.sup_abs() * b).to_string(),
                    None => String::new(),
                };
                match row {
                    Ok(row) => {
                        rec.push(e(row.discrete_continuity));
                        rec.extend(row.discrete_momentum.iter().map(|v| e(*v)));
                        rec.extend(row.interaction.iter().map(|v| e(*v)));
                        rec.push(e(row.sup_interaction));
                        rec.push(row.limit_continuity.map(e).unwrap_or_default());
                        match row.limit_momentum {
                            Some(m) => rec.extend(m.iter().map(|v| e(*v))),
                            None => rec.extend(blank(3)),
                        }
                    }
                    Err(_) => rec.extend(blank(12)),
                }
                rec.extend([e(r.h), r.stride.to_string(), r.grid.clone().unwrap_or_default()]);
                rec.push(self.b_n.map(e).unwrap_or_default());
                match (row, self.b_n) {
                    (Ok(row), Some(b)) => {
                        rec.push(bound(row.sup_interaction));
                        rec.push((row.interaction.norm() <= self.t_end * tf.sup_abs() * b).to_string());
                    }
                    _ => rec.extend(blank(2)),
                }
                rec.push(row.as_ref().err().cloned().unwrap_or_default());
                cw.write_record(&rec)?;
            }
            cw.flush()
        })
    }

    /// Reads a report; `t_end` is not stored per row and is supplied.
    pub fn read(path: &Path, t_end: f64) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        if r.headers().map_err(|e| csv_err(path, e))? != RESIDUAL_COLUMNS.as_slice() {
            return Err(malformed(path, "unexpected residual columns"));
        }
        let (mut rows, mut tfs) = (Vec::new(), Vec::new());
        let (mut h, mut stride, mut grid, mut b_n) = (f64::NAN, 0, None, None);
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let col = |name: &str| &rec[RESIDUAL_COLUMNS.iter().position(|c| *c == name).expect("column")];
            let num = |name: &str| {
                col(name)
                    .parse::<f64>()
                    .map_err(|_| malformed(path, format!("bad {name} '{}'", col(name))))
            };
            let v3 = |p: &str| -> Result<Vec3, CliError> {
                Ok(Vec3::new(num(&format!("{p}_1"))?, num(&format!("{p}_2"))?, num(&format!("{p}_3"))?))
            };
            if col("format_version") != FORMAT_VERSION.to_string() {
                return Err(malformed(path, "unsupported format_version"));
            }
            let tf = TestFunction::new(num("t0")?, v3("x0")?, num("rho_t")?, num("rho_x")?, num("amplitude")?)
                .map_err(|e| malformed(path, e))?;
            h = num("h")?;
            stride = col("stride").parse().map_err(|_| malformed(path, "bad stride"))?;
            grid = Some(col("grid").to_string()).filter(|g| !g.is_empty());
            b_n = if col("b_n").is_empty() { None } else { Some(num("b_n")?) };
            rows.push(match col("status") {
                "ok" => Ok(ResidualRow {
                    tf,
                    discrete_continuity: num("discrete_continuity")?,
                    discrete_momentum: v3("discrete_momentum")?,
                    interaction: v3("interaction")?,
                    sup_interaction: num("sup_interaction")?,
                    limit_continuity: if col("limit_continuity").is_empty() {
                        None
                    } else {
                        Some(num("limit_continuity")?)
                    },
                    limit_momentum: if col("limit_momentum_1").is_empty() {
                        None
                    } else {
                        Some(v3("limit_momentum")?)
                    },
                }),
                "invalid" => Err(col("error").to_string()),
                s => return Err(malformed(path, format!("bad status '{s}'"))),
            });
            tfs.push(tf);
        }
        Ok(ResidualFile {
            report: ResidualReport { h, stride, grid, rows },
            test_functions: tfs,
            b_n,
            t_end,
        })
    }
}

/// Two-column CSV for one plotted quantity.
pub fn write_series(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record([x_name, y_name])?;
        for (x, y) in points {
            cw.write_record([e(*x), e(*y)])?;
        }
        cw.flush()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1f64, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 1.0 - f64::EPSILON] {
            let s = format!("{v:.16e}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(format!("{v:e}").parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn header_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.txt");
        std::fs::write(&p, "# hydrolim trajectory\n# format-version 1\n# n 2\nbody\n# late comment\n").unwrap();
        let (h, body) = read_header(&p).unwrap();
        h.check_version("trajectory").unwrap();
        assert!(h.check_version("fields").is_err());
        assert_eq!(h.parse::<usize>("n").unwrap(), 2);
        assert_eq!(body, vec!["body".to_string(), "# late comment".to_string()]);
    }

    #[test]
    fn failed_atomic_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        let r = write_atomic(&p, |_| Err(std::io::Error::other("boom")));
        assert!(matches!(r, Err(CliError::Io(_))));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }
}
