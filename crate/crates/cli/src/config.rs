//! Run configuration files: UTF-8 `key = value` lines under `[section]`
//! headers, `#` comments. Unknown sections and keys are errors, as are keys
//! that do not apply to the chosen generator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hydrolim::initcond::ScalingMode;
use hydrolim::weakform::{LimitInteraction, TestFunction, DEFAULT_RADIUS_FRACTION, DEFAULT_TEST_FUNCTIONS};
use hydrolim::{PotentialSpec, Vec3};

use crate::error::CliError;

const SECTIONS: &[&str] = &["ic", "potential", "integrator", "grid", "testfns", "output", "sweep"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Lattice cloud with burst velocities `u = λx`.
    LatticeBurst,
    /// Planar lattice with velocities `(α, β, ±γ)`.
    Planar,
    /// Planar lattice `(a, b, 0)` with velocities `(a, b, c)`.
    Lifted,
}

impl Generator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Generator::LatticeBurst => "lattice-burst",
            Generator::Planar => "planar",
            Generator::Lifted => "lifted",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "lattice-burst" => Some(Generator::LatticeBurst),
            "planar" => Some(Generator::Planar),
            "lifted" => Some(Generator::Lifted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignPattern {
    Equal,
    Alternating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcConfig {
    pub generator: Generator,
    pub n: usize,
    /// Lattice spacing factor: spacing `α N^{-1/3}` (or `α N^{-1/2}` in the plane).
    pub alpha: f64,
    pub jitter: f64,
    pub seed: u64,
    pub lambda: f64,
    pub velocity: [f64; 3],
    pub signs: SignPattern,
    pub lift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepChoice {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub time_bins: usize,
    pub space_bins: [usize; 3],
    pub inflation: f64,
    /// Explicit box; otherwise the trajectory's bounding box, inflated.
    pub bounds: Option<(Vec3, Vec3)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFnConfig {
    pub count: usize,
    pub radius_fraction: f64,
    pub amplitude: f64,
    /// Replaces the default set when nonempty.
    pub explicit: Vec<TestFunction>,
    pub interaction: LimitInteraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub ic: PathBuf,
    pub trajectory: PathBuf,
    pub fields: PathBuf,
    pub residuals: PathBuf,
    pub log: PathBuf,
    pub sweep: PathBuf,
    pub sweep_summary: PathBuf,
    pub plots: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Strictly increasing, at least two entries.
    pub n_values: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ic: IcConfig,
    pub potential: PotentialSpec,
    /// Interaction scale used when no certificate provides one.
    pub sigma: Option<f64>,
    pub t_end: f64,
    pub h: StepChoice,
    pub stride: usize,
    pub scaling: ScalingMode,
    pub grid: GridConfig,
    pub testfns: TestFnConfig,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

/// Command-line overrides applied on top of a parsed file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub h: Option<f64>,
    pub stride: Option<usize>,
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

/// Entries of one section; every key must be consumed exactly once.
struct Section {
    name: &'static str,
    entries: Vec<Entry>,
    used: Vec<bool>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl Section {
    fn take_all(&mut self, key: &str) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (e, used) in self.entries.iter().zip(self.used.iter_mut()) {
            if e.key == key {
                *used = true;
                out.push((e.value.clone(), e.line));
            }
        }
        out
    }

    fn take(&mut self, key: &str) -> Result<Option<(String, usize)>, CliError> {
        let mut all = self.take_all(key);
        if all.len() > 1 {
            return Err(invalid(format!(
                "line {}: duplicate key '{key}' in [{}]",
                all[1].1, self.name
            )));
        }
        Ok(all.pop())
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key)? {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| invalid(format!("line {line}: cannot parse {}.{key} = '{v}'", self.name))),
        }
    }

    fn floats(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.take(key)? {
            None => Ok(None),
            Some((v, line)) => parse_list(&v)
                .map(Some)
                .map_err(|_| invalid(format!("line {line}: cannot parse {}.{key} = '{v}'", self.name))),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some((e, _)) => Err(invalid(format!(
                "line {}: unknown key '{}' in [{}]",
                e.line, e.key, self.name
            ))),
            None => Ok(()),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, ()> {
    v.split(',').map(|s| s.trim().parse().map_err(|_| ())).collect()
}

fn vec3(v: &[f64], what: &str) -> Result<Vec3, CliError> {
    match v {
        [a, b, c] => Ok(Vec3::new(*a, *b, *c)),
        _ => Err(invalid(format!("{what} needs three comma-separated values"))),
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<&'static str, Section>, CliError> {
    let mut sections: BTreeMap<&'static str, Section> = SECTIONS
        .iter()
        .map(|&name| {
            (
                name,
                Section {
                    name,
                    entries: Vec::new(),
                    used: Vec::new(),
                },
            )
        })
        .collect();
    let mut current: Option<&'static str> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            current = Some(
                SECTIONS
                    .iter()
                    .copied()
                    .find(|s| *s == name)
                    .ok_or_else(|| invalid(format!("line {line}: unknown section [{name}]")))?,
            );
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {line}: expected 'key = value'")))?;
        let section = current.ok_or_else(|| invalid(format!("line {line}: key outside any section")))?;
        let s = sections.get_mut(section).expect("known section");
        s.entries.push(Entry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
        s.used.push(false);
    }
    Ok(sections)
}

impl RunConfig {
    /// Reads a file; relative output paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut s = split_sections(text)?;
        let mut sec = |name: &str| s.remove(name).expect("known section");

        let mut ic = sec("ic");
        let generator = match ic.take("generator")? {
            Some((g, line)) => Generator::parse(&g)
                .ok_or_else(|| invalid(format!("line {line}: unknown generator '{g}'")))?,
            None => Generator::LatticeBurst,
        };
        let n = ic.parsed("n")?.unwrap_or(64);
        let alpha = ic.parsed("alpha")?.unwrap_or(0.75);
        let jitter = ic.parsed("jitter")?.unwrap_or(0.0);
        let seed = ic.parsed("seed")?.unwrap_or(0);
        let (mut lambda, mut velocity, mut signs, mut lift) = (1.0, [1.0, 0.0, 1.0], SignPattern::Alternating, 1.0);
        match generator {
            Generator::LatticeBurst => lambda = ic.parsed("lambda")?.unwrap_or(lambda),
            Generator::Planar => {
                if let Some(v) = ic.floats("velocity")? {
                    let v = vec3(&v, "ic.velocity")?;
                    velocity = [v[0], v[1], v[2]];
                }
                if let Some((p, line)) = ic.take("signs")? {
                    signs = match p.as_str() {
                        "equal" => SignPattern::Equal,
                        "alternating" => SignPattern::Alternating,
                        _ => return Err(invalid(format!("line {line}: signs must be 'equal' or 'alternating'"))),
                    };
                }
            }
            Generator::Lifted => lift = ic.parsed("lift")?.unwrap_or(lift),
        }
        ic.finish()?;

        let mut pot = sec("potential");
        let kind = pot.take("kind")?.map(|(k, _)| k).unwrap_or_else(|| "power-law".into());
        let potential = match kind.as_str() {
            "power-law" => {
                let p: f64 = pot.parsed("p")?.unwrap_or(2.0);
                PotentialSpec::power_law(p).map_err(|e| invalid(e.to_string()))?
            }
            "free" => PotentialSpec::Free,
            other => return Err(invalid(format!("unknown potential kind '{other}'"))),
        };
        let sigma: Option<f64> = pot.parsed("sigma")?;
        pot.finish()?;

        let mut int = sec("integrator");
        let t_end = int.parsed("t_end")?.unwrap_or(1.0);
        let h = match int.take("h")? {
            None => StepChoice::Auto,
            Some((v, _)) if v == "auto" => StepChoice::Auto,
            Some((v, line)) => StepChoice::Fixed(
                v.parse()
                    .map_err(|_| invalid(format!("line {line}: integrator.h must be 'auto' or a number")))?,
            ),
        };
        let stride = int.parsed("stride")?.unwrap_or(1);
        let scaling = match int.take("scaling")? {
            None => ScalingMode::GeneralQuadratic,
            Some((m, line)) => ScalingMode::parse(&m).map_err(|e| invalid(format!("line {line}: {e}")))?,
        };
        int.finish()?;

        let mut g = sec("grid");
        let time_bins = g.parsed("time_bins")?.unwrap_or(hydrolim::fields::DEFAULT_TIME_BINS);
        let space_bins = match g.take("space_bins")? {
            None => [hydrolim::fields::DEFAULT_SPACE_BINS; 3],
            Some((v, line)) => {
                let b: Vec<usize> =
                    parse_list(&v).map_err(|_| invalid(format!("line {line}: bad grid.space_bins '{v}'")))?;
                match b[..] {
                    [a] => [a; 3],
                    [a, b, c] => [a, b, c],
                    _ => return Err(invalid(format!("line {line}: grid.space_bins takes one or three counts"))),
                }
            }
        };
        let inflation = g.parsed("inflation")?.unwrap_or(hydrolim::fields::DEFAULT_INFLATION);
        let bounds = match (g.floats("lo")?, g.floats("hi")?) {
            (None, None) => None,
            (Some(lo), Some(hi)) => Some((vec3(&lo, "grid.lo")?, vec3(&hi, "grid.hi")?)),
            _ => return Err(invalid("grid.lo and grid.hi must be given together")),
        };
        g.finish()?;

        let mut tf = sec("testfns");
        let count = tf.parsed("count")?.unwrap_or(DEFAULT_TEST_FUNCTIONS);
        let radius_fraction = tf.parsed("radius_fraction")?.unwrap_or(DEFAULT_RADIUS_FRACTION);
        let amplitude = tf.parsed("amplitude")?.unwrap_or(1.0);
        let interaction = match tf.take("interaction")? {
            None => LimitInteraction::Zero,
            Some((m, line)) => match m.as_str() {
                "zero" => LimitInteraction::Zero,
                "estimated" => LimitInteraction::Estimated,
                _ => return Err(invalid(format!("line {line}: interaction must be 'zero' or 'estimated'"))),
            },
        };
        let mut explicit = Vec::new();
        for (v, line) in tf.take_all("function") {
            let p: Vec<f64> = parse_list(&v).map_err(|_| invalid(format!("line {line}: bad test function '{v}'")))?;
            let (t0, x0, rho_t, rho_x, amp) = match p[..] {
                [t0, a, b, c, rt, rx] => (t0, Vec3::new(a, b, c), rt, rx, amplitude),
                [t0, a, b, c, rt, rx, amp] => (t0, Vec3::new(a, b, c), rt, rx, amp),
                _ => {
                    return Err(invalid(format!(
                        "line {line}: function = t0, x, y, z, rho_t, rho_x[, amplitude]"
                    )))
                }
            };
            explicit.push(
                TestFunction::new(t0, x0, rho_t, rho_x, amp).map_err(|e| invalid(format!("line {line}: {e}")))?,
            );
        }
        tf.finish()?;

        let mut out = sec("output");
        let dir = base.join(out.take("dir")?.map(|(d, _)| d).unwrap_or_else(|| ".".into()));
        let mut file = |key: &str, default: &str| -> Result<PathBuf, CliError> {
            Ok(dir.join(out.take(key)?.map(|(v, _)| v).unwrap_or_else(|| default.into())))
        };
        let output = OutputConfig {
            ic: file("ic", "ic.txt")?,
            trajectory: file("trajectory", "trajectory.txt")?,
            fields: file("fields", "fields.csv")?,
            residuals: file("residuals", "residuals.csv")?,
            log: file("log", "run.log")?,
            sweep: file("sweep", "sweep.csv")?,
            sweep_summary: file("sweep_summary", "sweep_summary.csv")?,
            plots: file("plots", "plots")?,
            dir: dir.clone(),
        };
        out.finish()?;

        let mut sw = sec("sweep");
        let sweep = match sw.take("n_values")? {
            None => None,
            Some((v, line)) => Some(SweepConfig {
                n_values: parse_list(&v).map_err(|_| invalid(format!("line {line}: bad sweep.n_values '{v}'")))?,
            }),
        };
        sw.finish()?;

        let cfg = RunConfig {
            ic: IcConfig {
                generator,
                n,
                alpha,
                jitter,
                seed,
                lambda,
                velocity,
                signs,
                lift,
            },
            potential,
            sigma,
            t_end,
            h,
            stride,
            scaling,
            grid: GridConfig {
                time_bins,
                space_bins,
                inflation,
                bounds,
            },
            testfns: TestFnConfig {
                count,
                radius_fraction,
                amplitude,
                explicit,
                interaction,
            },
            output,
            sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(n) = o.n {
            self.ic.n = n;
        }
        if let Some(seed) = o.seed {
            self.ic.seed = seed;
        }
        if let Some(h) = o.h {
            self.h = StepChoice::Fixed(h);
        }
        if let Some(stride) = o.stride {
            self.stride = stride;
        }
        self.validate()
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {v}")))
            }
        };
        if self.ic.n < 2 {
            return Err(invalid("ic.n must be at least 2"));
        }
        positive(self.ic.alpha, "ic.alpha")?;
        positive(self.ic.lambda, "ic.lambda")?;
        if !(0.0..0.49).contains(&self.ic.jitter) {
            return Err(invalid("ic.jitter must lie in [0, 0.49)"));
        }
        positive(self.t_end, "integrator.t_end")?;
        if let StepChoice::Fixed(h) = self.h {
            positive(h, "integrator.h")?;
        }
        if let Some(s) = self.sigma {
            positive(s, "potential.sigma")?;
        }
        if self.stride == 0 {
            return Err(invalid("integrator.stride must be at least 1"));
        }
        if self.grid.time_bins == 0 || self.grid.space_bins.contains(&0) {
            return Err(invalid("grid bin counts must be positive"));
        }
        if !(self.grid.inflation >= 0.0 && self.grid.inflation.is_finite()) {
            return Err(invalid("grid.inflation must be nonnegative"));
        }
        if let Some((lo, hi)) = &self.grid.bounds {
            if (0..3).any(|a| !(hi[a] > lo[a])) {
                return Err(invalid("grid.hi must exceed grid.lo on every axis"));
            }
        }
        if self.testfns.explicit.is_empty() && self.testfns.count == 0 {
            return Err(invalid("testfns.count must be positive"));
        }
        if !(self.testfns.radius_fraction > 0.0 && self.testfns.radius_fraction < 0.5) {
            return Err(invalid("testfns.radius_fraction must lie in (0, 1/2)"));
        }
        if let Some(sw) = &self.sweep {
            if sw.n_values.len() < 2 || sw.n_values.windows(2).any(|w| w[1] <= w[0]) || sw.n_values[0] < 2 {
                return Err(invalid("sweep.n_values must be strictly increasing, at least two values ≥ 2"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_and_paths() {
        let c = parse("[ic]\nn = 128 # comment\n[output]\ndir = out\n").unwrap();
        assert_eq!(c.ic.n, 128);
        assert_eq!(c.ic.generator, Generator::LatticeBurst);
        assert_eq!(c.h, StepChoice::Auto);
        assert_eq!(c.output.trajectory, Path::new("/base/out/trajectory.txt"));
        assert_eq!(c.grid.space_bins, [24; 3]);
        assert_eq!(c.testfns.count, 8);
    }

    #[test]
    fn unknown_keys_and_sections_are_errors() {
        assert!(parse("[ic]\nlamda = 1\n").unwrap_err().to_string().contains("unknown key 'lamda'"));
        assert!(parse("[icc]\n").is_err());
        assert!(parse("n = 3\n").is_err());
        // Keys that do not belong to the chosen generator are unknown too.
        assert!(parse("[ic]\ngenerator = planar\nlambda = 2\n").is_err());
        assert!(parse("[ic]\nn = 3\nn = 4\n").is_err());
    }

    #[test]
    fn explicit_test_functions_and_overrides() {
        let mut c = parse(
            "[testfns]\namplitude = 0\nfunction = 0.5, 0, 0, 0, 0.2, 0.3\nfunction = 0.5, 0, 0, 0, 0.2, 0.3, 2\n\
             [integrator]\nh = 0.01\nstride = 2\n[sweep]\nn_values = 8, 27\n",
        )
        .unwrap();
        assert_eq!(c.testfns.explicit.len(), 2);
        assert_eq!(c.testfns.explicit[0].amplitude, 0.0);
        assert_eq!(c.testfns.explicit[1].amplitude, 2.0);
        assert_eq!(c.h, StepChoice::Fixed(0.01));
        c.apply(&Overrides {
            n: Some(27),
            seed: Some(3),
            h: Some(0.005),
            stride: None,
        })
        .unwrap();
        assert_eq!((c.ic.n, c.ic.seed, c.h, c.stride), (27, 3, StepChoice::Fixed(0.005), 2));
        assert!(c.apply(&Overrides { n: Some(1), ..Default::default() }).is_err());
    }

    #[test]
    fn sweep_values_must_increase() {
        assert!(parse("[sweep]\nn_values = 64, 64\n").is_err());
        assert!(parse("[sweep]\nn_values = 64\n").is_err());
    }
}
